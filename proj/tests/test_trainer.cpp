#include "checks.hpp"

#include "gkd/ablation.hpp"
#include "gkd/optim.hpp"
#include "gkd/pipeline.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace gkd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path scratch_dir(const std::string& name)
{
    const fs::path d = fs::temp_directory_path() / ("gkd_trainer_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

/// Small grid: random-init teachers and a few dozen clips, enough to exercise every code path.
struct Fixture {
    ExperimentConfig cfg;
    std::vector<VideoClip> train, val, test;
    std::vector<TeacherModel> teachers;
    TeacherOutputs train_out, val_out;

    explicit Fixture(int epochs = 3)
    {
        cfg.sizes = {96, 48, 48};
        cfg.distill.epochs = epochs;
        cfg.distill.lr_decay_every = 2;
        cfg.validate();
        const auto splits = generate_splits(cfg.data_seed, cfg.sizes, static_cast<int>(cfg.model.n_classes), cfg.geometry);
        train = splits[0].clips;
        val = splits[1].clips;
        test = splits[2].clips;
        for (PretextTask t : kAllTasks) teachers.emplace_back(t, cfg.model, mix_seed(5, static_cast<std::uint64_t>(t)));
        train_out = compute_teacher_outputs(teachers, train, cfg.model.input_frames);
        val_out = compute_teacher_outputs(teachers, val, cfg.model.input_frames);
    }

    TrainResult run(const fs::path& dir = {}) const { return gkd::train(cfg, train, train_out, val, val_out, teachers, dir); }
};

} // namespace

TEST_CASE("lr schedule")
{
    CHECK(step_decay_lr(0.01, 100, 50, 0.5) == 0.01 / 4);
    CHECK(step_decay_lr(0.01, 49, 50, 0.5) == 0.01);
    CHECK(step_decay_lr(0.01, 50, 50, 0.5) == 0.005);
    const DistillConfig d;
    CHECK(step_decay_lr(d.lr, 59, d.lr_decay_every, d.lr_decay_factor) == d.lr / 4);
    ExperimentConfig full;
    apply_paper_scale(full);
    CHECK(full.distill.epochs == 350);
    CHECK(full.distill.batch_size == 128);
    CHECK(full.distill.lr_decay_every == 50);
    CHECK(step_decay_lr(full.distill.lr, 100, full.distill.lr_decay_every, full.distill.lr_decay_factor) == full.distill.lr / 4);
}

TEST_CASE("mode coefficients")
{
    const auto s = mode_weights(AblationMode::Scratch, 0.6, 0.5);
    CHECK(s.ce == 1.0);
    CHECK(s.soft == 0.0);
    CHECK(s.repr == 0.0);
    const auto u = mode_weights(AblationMode::UniformKD, 0.6, 0.5);
    CHECK(u.ce == doctest::Approx(0.4));
    CHECK(u.soft == 0.6);
    CHECK_FALSE(u.learns_logits_graph);
    const auto r = mode_weights(AblationMode::GrOnly, 0.6, 0.5);
    CHECK(r.ce == 1.0);
    CHECK(r.repr == 0.5);
    const auto b = mode_weights(AblationMode::GlGr, 0.6, 0.5);
    CHECK(b.soft == 0.6);
    CHECK(b.repr == 0.5);
    CHECK(b.learns_logits_graph);
    CHECK(parse_mode("gl_gr") == AblationMode::GlGr);
    CHECK_THROWS_AS(parse_mode("best"), std::invalid_argument);
}

TEST_CASE("total_loss examples")
{
    std::mt19937_64 rng(1);
    check::LossInstance inst(rng);
    inst.batch = 2;
    const Index b = 2;
    DistillBatch batch;
    batch.labels = {inst.batch_data.labels[0], inst.batch_data.labels[1]};
    for (const auto& t : inst.batch_data.teacher_logits) batch.teacher_logits.push_back(t.topRows(b));
    batch.softened_vertices = Tensor({b, 6, inst.ck, inst.h * inst.w},
                                     inst.batch_data.softened_vertices.data().head(b * 6 * inst.ck * inst.h * inst.w));
    const RowMatrix logits = inst.student_logits.topRows(b);
    const Tensor tap({b, inst.cs, inst.h, inst.w}, inst.tap.data().head(b * inst.cs * inst.h * inst.w));

    Tape tape;
    auto run = [&](const ModeWeights& w, LogitsGraph& gl, const ReprGraph& gr) {
        Var s = tape.leaf(Tensor::from_matrix(logits), true);
        Var t = tape.leaf(tap, true);
        return total_loss(s, t, batch, gl, tape.leaf(gl.raw_params(), true), gr, tape.leaf(gr.raw_params(), true), w, 0.9);
    };

    LogitsGraph gl = inst.gl;
    gl.raw_params() = inst.gl_raw;
    ReprGraph gr = inst.gr;
    gr.raw_params() = inst.gr_raw;

    SUBCASE("scratch is exactly cross entropy")
    {
        const LossTerms t = run(mode_weights(AblationMode::Scratch, 0.6, 0.5), gl, gr);
        Tape other;
        const Scalar ce = mean(cross_entropy_rows(other.constant(Tensor::from_matrix(logits)), batch.labels)).value()[0];
        CHECK(t.total.value()[0] == ce);
        CHECK(t.soft == 0.0);
        CHECK(t.repr == 0.0);
    }
    SUBCASE("zero soft coefficient removes the soft term")
    {
        ModeWeights w = mode_weights(AblationMode::GlGr, 0.6, 0.5);
        w.ce = 1.0;
        w.soft = 0.0;
        const LossTerms t = run(w, gl, gr);
        CHECK(std::abs(t.total.value()[0] - (t.ce + 0.5 * t.repr)) < 1e-14);
        CHECK(t.soft == 0.0);
    }
    SUBCASE("hand-summed parts from the oracles")
    {
        const ModeWeights w = mode_weights(AblationMode::GlGr, 0.6, 0.5);
        const LossTerms t = run(w, gl, gr);
        const RowMatrix we = masked_softmax_rows(inst.gl_raw.matrix(4, 4), gl.mask());
        Vector vw(6);
        Scalar z = 0;
        for (Index k = 0; k < 6; ++k) z += std::exp(inst.gr_raw[k] / gr.temperatures()[static_cast<std::size_t>(k)]);
        for (Index k = 0; k < 6; ++k) vw[k] = std::exp(inst.gr_raw[k] / gr.temperatures()[static_cast<std::size_t>(k)]) / z;
        Scalar ce = 0, soft = 0, repr = 0;
        const Index s = inst.h * inst.w;
        for (Index i = 0; i < b; ++i) {
            const Vector z_i = logits.row(i).transpose();
            ce += oracle::cross_entropy(z_i, batch.labels[static_cast<std::size_t>(i)]) / b;
            Scalar edge_sum = 0;
            for (Index m = 0; m < 4; ++m)
                for (Index n = 0; n < 4; ++n) {
                    if (n == m) continue;
                    const Vector mu = oracle::softmax(batch.teacher_logits[static_cast<std::size_t>(n)].row(i).transpose() /
                                                      gl.temperatures()[static_cast<std::size_t>(n)]);
                    edge_sum += we(m, n) * oracle::transport_lp(mu, oracle::softmax(z_i), oracle::index_cost(inst.classes, 0.25));
                }
            soft += edge_sum / 4.0 / b;
            RowMatrix student(inst.cs, s);
            for (Index c = 0; c < inst.cs; ++c)
                student.row(c) = oracle::softmax(tap.data().segment((i * inst.cs + c) * s, s)).transpose();
            for (Index k = 0; k < 6; ++k) {
                const RowMatrix d = Eigen::Map<const RowMatrix>(
                    batch.softened_vertices.data().data() + ((i * 6 + k) * inst.ck) * s, inst.ck, s);
                repr += vw[k] * oracle::mmd(student, d, 0.9) / b;
            }
        }
        CHECK(std::abs(t.ce - ce) < 1e-10);
        CHECK(std::abs(t.soft - soft) < 1e-10);
        CHECK(std::abs(t.repr - repr) < 1e-10);
        CHECK(std::abs(t.total.value()[0] - (0.4 * ce + 0.6 * soft + 0.5 * repr)) < 1e-10);
    }
    SUBCASE("missing teachers")
    {
        DistillBatch empty;
        empty.labels = batch.labels;
        Var s = tape.leaf(Tensor::from_matrix(logits), true);
        Var t = tape.leaf(tap, true);
        CHECK_THROWS_AS(total_loss(s, t, empty, gl, tape.leaf(gl.raw_params(), true), gr, tape.leaf(gr.raw_params(), true),
                                   mode_weights(AblationMode::UniformKD, 0.6, 0.5), 1.0),
                        std::invalid_argument);
    }
}

TEST_CASE("evaluate")
{
    const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
    CHECK(evaluate_predictions(labels, labels, 4).accuracy == 1.0);
    const std::vector<int> constant(8, 2);
    CHECK(evaluate_predictions(constant, labels, 4).accuracy == 0.25);
    CHECK_THROWS_AS(evaluate_predictions(std::vector<int>{}, std::vector<int>{}, 4), std::invalid_argument);

    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> u(0, 4);
    std::vector<int> p(200), y(200);
    for (std::size_t i = 0; i < 200; ++i) {
        p[i] = u(rng);
        y[i] = u(rng) == 0 ? p[i] : u(rng);
    }
    const EvalReport r = evaluate_predictions(p, y, 6);
    Eigen::MatrixXi conf = Eigen::MatrixXi::Zero(6, 6);
    for (std::size_t i = 0; i < 200; ++i) ++conf(y[i], p[i]);
    CHECK(r.confusion == conf);
    CHECK(r.accuracy == oracle::accuracy(p, y));
    for (int k = 0; k < 5; ++k) CHECK(r.per_class[static_cast<std::size_t>(k)] == static_cast<Scalar>(conf(k, k)) / conf.row(k).sum());
    CHECK(std::isnan(r.per_class[5]));
}

TEST_CASE("train: determinism, outputs, persistence, teacher freeze")
{
    Fixture fx(3);
    std::vector<std::uint64_t> before;
    for (const auto& t : fx.teachers) before.push_back(t.checksum());

    const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
    const TrainResult ra = fx.run(a);
    const TrainResult rb = fx.run(b);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    for (std::size_t i = 0; i < fx.teachers.size(); ++i) CHECK(fx.teachers[i].checksum() == before[i]);

    std::istringstream csv(slurp(a / "metrics.csv"));
    std::string header;
    std::getline(csv, header);
    CHECK(header == metrics_header());
    int rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    CHECK(rows == 3);
    CHECK(fs::exists(a / "summary.txt"));
    CHECK(slurp(a / "summary.txt").find("\"best_val_accuracy\"") != std::string::npos);
    for (const auto& m : ra.history) CHECK(m.decomposition_error <= 1e-9);

    // Best checkpoint reproduces the returned student's evaluation bitwise.
    const LoadedStudent loaded = load_student(a / "best.ckpt", fx.cfg);
    CHECK(loaded.epoch == ra.best_epoch);
    const EvalReport e1 = evaluate(ra.student, fx.test, fx.cfg.model.input_frames);
    const EvalReport e2 = evaluate(loaded.student, fx.test, fx.cfg.model.input_frames);
    CHECK(e1.accuracy == e2.accuracy);
    CHECK(e1.confusion == e2.confusion);
    CHECK(loaded.student.checksum() == ra.student.checksum());
    CHECK(loaded.gl.raw_params().data() == ra.gl.raw_params().data());
    CHECK(loaded.bank.first.h == ra.bank.first.h);

    const Checkpoint ck = read_checkpoint(a / "last.ckpt");
    CHECK(ck.version == kCheckpointVersion);
    CHECK(ck.config_hash == fx.cfg.hash());
    CHECK(ck.contains("adam/step"));
    CHECK(ck.contains("sketch/first/h"));

    ExperimentConfig other = fx.cfg;
    other.distill.lambda = 0.3;
    CHECK_THROWS_AS(load_student(a / "best.ckpt", other), CheckpointMismatch);
    CHECK_NOTHROW(load_student(a / "best.ckpt", other, true));

    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("checkpoint container round trip and corruption")
{
    const fs::path d = scratch_dir("ckpt");
    Checkpoint c;
    c.config_hash = 0xABCDEF0123456789ULL;
    std::mt19937_64 rng(3);
    c.put("a", check::gaussian_tensor({2, 3, 4}, rng));
    c.put("b/c", Tensor({1}, {std::numeric_limits<Scalar>::denorm_min()}));
    save_checkpoint(d / "x.ckpt", c);
    const Checkpoint back = load_checkpoint(d / "x.ckpt", c.config_hash);
    CHECK(back.entries.size() == 2);
    CHECK(back.get("a").shape() == Shape{2, 3, 4});
    CHECK(back.get("a").data() == c.get("a").data());
    CHECK(back.get("b/c")[0] == std::numeric_limits<Scalar>::denorm_min());
    CHECK_THROWS_AS(load_checkpoint(d / "x.ckpt", 1), CheckpointMismatch);
    fs::resize_file(d / "x.ckpt", 40);
    CHECK_THROWS(read_checkpoint(d / "x.ckpt"));
    std::ofstream(d / "bad.ckpt") << "not a checkpoint at all";
    CHECK_THROWS(read_checkpoint(d / "bad.ckpt"));
    fs::remove_all(d);
}

TEST_CASE("teacher checkpoints round trip")
{
    const fs::path d = scratch_dir("teacher");
    ExperimentConfig cfg;
    const TeacherModel t(PretextTask::Tracking, cfg.model, 9);
    save_teacher(d / "t.ckpt", cfg, t);
    const TeacherModel back = load_teacher(d / "t.ckpt", PretextTask::Tracking, cfg);
    CHECK(back.params().checksum() == t.params().checksum());
    CHECK_THROWS(load_teacher(d / "t.ckpt", PretextTask::Sorting, cfg));
    ExperimentConfig other = cfg;
    other.teacher_seed = 99;
    CHECK_THROWS_AS(load_teacher(d / "t.ckpt", PretextTask::Tracking, other), CheckpointMismatch);
    fs::remove_all(d);
}

TEST_CASE("NaN aborts training and keeps the last good checkpoint")
{
    Fixture fx(3);
    fx.cfg.distill.lr_decay_every = 1;
    fx.cfg.distill.lr_decay_factor = 1e300;  // epoch 0 trains normally, epoch 1 explodes
    const fs::path d = scratch_dir("nan");
    CHECK_THROWS_AS(fx.run(d), TrainingDiverged);
    REQUIRE(fs::exists(d / "last.ckpt"));
    const Checkpoint last = read_checkpoint(d / "last.ckpt");
    CHECK(last.get("meta/epoch")[0] == 0.0);
    for (const auto& [name, t] : last.entries) CHECK(t.all_finite());
    fs::remove_all(d);
}

TEST_CASE("uniform_kd and gl_only coincide on the first step")
{
    Fixture fx(1);
    fx.cfg.distill.mode = AblationMode::UniformKD;
    // One batch covering the whole set makes the first epoch a single step.
    fx.cfg.distill.batch_size = static_cast<Index>(fx.train.size());
    const TrainResult u = fx.run();
    fx.cfg.distill.mode = AblationMode::GlOnly;
    const TrainResult g = fx.run();
    CHECK(u.history[0].train_total == g.history[0].train_total);
    CHECK(u.history[0].train_soft == g.history[0].train_soft);
}

TEST_CASE("30-epoch smoke run: smoothed training loss never increases (5 seeds)")
{
    Fixture fx(30);
    fx.cfg.distill.lr_decay_every = 10;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        fx.cfg.distill.seed = seed;
        const TrainResult r = fx.run();
        REQUIRE(r.history.size() == 30);
        std::vector<Scalar> blocks;
        for (int start = 0; start < 30; start += 5) {
            Scalar s = 0;
            for (int e = start; e < start + 5; ++e) s += r.history[static_cast<std::size_t>(e)].train_total;
            blocks.push_back(s / 5);
        }
        for (std::size_t i = 1; i < blocks.size(); ++i) {
            INFO("seed " << seed << " block " << i << ": " << blocks[i - 1] << " -> " << blocks[i]);
            CHECK(blocks[i] <= blocks[i - 1]);
        }
    }
}

TEST_CASE("ablation grid: shape, partial failure, restart")
{
    Fixture fx(2);
    const fs::path d = scratch_dir("ablate");
    fx.cfg.run_dir = d;
    fx.cfg.ablation_seeds = 5;
    Datasets data;
    data.train.clips = fx.train;
    data.val.clips = fx.val;
    data.test.clips = fx.test;
    const AblationTable t = run_ablation(fx.cfg, data, fx.teachers, 1);
    CHECK(t.rows.size() == 5);
    for (const auto& row : t.rows) {
        CHECK(row.accuracies.size() == 5);
        CHECK(row.errors.empty());
    }
    CHECK(fs::exists(d / "ablation.csv"));
    const auto stamp = fs::last_write_time(run_directory(fx.cfg, AblationMode::GlGr, fx.cfg.distill.seed) / "result.txt");

    // A second pass finds every cell finished and retrains nothing.
    const AblationTable again = run_ablation(fx.cfg, data, fx.teachers, 1);
    CHECK(fs::last_write_time(run_directory(fx.cfg, AblationMode::GlGr, fx.cfg.distill.seed) / "result.txt") == stamp);
    for (std::size_t i = 0; i < t.rows.size(); ++i) CHECK(again.rows[i].accuracies == t.rows[i].accuracies);
    const AblationTable collected = collect_ablation(fx.cfg);
    CHECK(collected.rows.size() == 5);

    // Teachers that cannot serve the graph modes fail those rows only.
    const fs::path d2 = scratch_dir("ablate_fail");
    fx.cfg.run_dir = d2;
    fx.cfg.ablation_seeds = 1;
    std::vector<TeacherModel> lone(fx.teachers.begin(), fx.teachers.begin() + 1);
    const AblationTable partial = run_ablation(fx.cfg, data, lone, 1);
    CHECK(partial.find(AblationMode::Scratch)->accuracies.size() == 1);
    CHECK_FALSE(partial.find(AblationMode::GlGr)->errors.empty());
    fs::remove_all(d);
    fs::remove_all(d2);
}

TEST_CASE("ordering rule")
{
    AblationRow a, b;
    CHECK_FALSE(ordering_holds(a, b));  // nothing finished
    a.accuracies = {0.6};
    b.accuracies = {0.6};
    a.mean = 0.60;
    a.stdev = 0.001;
    b.mean = 0.595;
    b.stdev = 0.001;
    CHECK(ordering_holds(a, b));  // intervals do not overlap
    b.stdev = 0.01;
    CHECK_FALSE(ordering_holds(a, b));
    b.mean = 0.58;
    CHECK(ordering_holds(a, b));  // one accuracy point
}

TEST_CASE("config file, overrides and hashing")
{
    const fs::path d = scratch_dir("config");
    std::ofstream(d / "c.txt") << "# comment\ndistill.lambda = 0.7\n\ndistill.mode = gr_only\nablation.seeds = 3\n";
    ExperimentConfig c = load_config(d / "c.txt");
    CHECK(c.distill.lambda == 0.7);
    CHECK(c.distill.mode == AblationMode::GrOnly);
    apply_setting(c, "distill.seed=4");
    CHECK(c.distill.seed == 4);
    CHECK_THROWS_AS(apply_setting(c, "distill.nope=1"), std::invalid_argument);
    CHECK_THROWS_AS(apply_setting(c, "distill.lambda"), std::invalid_argument);
    std::ofstream(d / "bad.txt") << "distill.lambda = 0.5\ndistill.epochs = many\n";
    try {
        load_config(d / "bad.txt");
        CHECK(false);
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    // The canonical text reproduces the same hash.
    std::ofstream(d / "round.txt") << c.to_text();
    CHECK(load_config(d / "round.txt").hash() == c.hash());
    ExperimentConfig moved = c;
    moved.run_dir = "elsewhere";
    moved.data_dir = "elsewhere/data";
    moved.teacher_dir = "elsewhere/teachers";
    moved.ablation_seeds = 9;
    CHECK(moved.hash() == c.hash());
    moved.distill.beta = 0.25;
    CHECK(moved.hash() != c.hash());
    CHECK(moved.teacher_hash() == c.teacher_hash());
    moved.data_seed = 99;
    CHECK(moved.teacher_hash() != c.teacher_hash());
    ExperimentConfig lam = c;
    lam.distill.lambda = 1.0;
    CHECK_THROWS_AS(lam.validate(), std::invalid_argument);
    fs::remove_all(d);
}
