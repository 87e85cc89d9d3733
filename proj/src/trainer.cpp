#include "gkd/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace gkd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

RowMatrix gather_rows(const RowMatrix& m, std::span<const Index> idx)
{
    RowMatrix out(static_cast<Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = m.row(idx[i]);
    return out;
}

Tensor gather_leading(const Tensor& t, std::span<const Index> idx)
{
    Shape shape = t.shape();
    const Index per = t.size() / shape[0];
    shape[0] = static_cast<Index>(idx.size());
    Tensor out(shape);
    for (std::size_t i = 0; i < idx.size(); ++i) out.data().segment(static_cast<Index>(i) * per, per) = t.data().segment(idx[i] * per, per);
    return out;
}

std::vector<Index> iota_indices(Index n)
{
    std::vector<Index> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

std::uint64_t teachers_checksum(std::span<const TeacherModel> teachers)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (const TeacherModel& t : teachers) {
        const std::uint64_t c = t.checksum();
        h = fnv1a(&c, sizeof c, h);
    }
    return h;
}

Tensor index_tensor(const std::vector<Index>& v)
{
    Tensor t({static_cast<Index>(v.size())});
    for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<Index>(i)] = static_cast<Scalar>(v[i]);
    return t;
}

Tensor sign_tensor(const std::vector<int>& v)
{
    Tensor t({static_cast<Index>(v.size())});
    for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<Index>(i)] = v[i];
    return t;
}

SketchParams sketch_from(const Checkpoint& c, const std::string& slot, Index e)
{
    SketchParams p;
    p.e = e;
    const Tensor& h = c.get("sketch/" + slot + "/h");
    const Tensor& s = c.get("sketch/" + slot + "/s");
    for (Index i = 0; i < h.size(); ++i) p.h.push_back(static_cast<Index>(h[i]));
    for (Index i = 0; i < s.size(); ++i) p.s.push_back(static_cast<int>(s[i]));
    p.validate();
    return p;
}

std::vector<Scalar> repeat(Scalar v, Index n) { return std::vector<Scalar>(static_cast<std::size_t>(n), v); }

} // namespace

TeacherOutputs compute_teacher_outputs(std::span<const TeacherModel> teachers, const std::vector<VideoClip>& clips, Index input_frames,
                                       Index batch_size)
{
    TeacherOutputs out;
    const auto n = static_cast<Index>(clips.size());
    const auto all = iota_indices(n);
    for (const TeacherModel& t : teachers) {
        RowMatrix logits(n, t.n_classes());
        RowMatrix taps;
        for (Index start = 0; start < n; start += batch_size) {
            const Index count = std::min(batch_size, n - start);
            std::span<const Index> idx(all.data() + start, static_cast<std::size_t>(count));
            auto e = t.forward_with_tap(batch_inputs(clips, idx, input_frames));
            const auto tv = e.tap.rows_view();
            if (taps.size() == 0) taps.resize(n, tv.cols());
            logits.middleRows(start, count) = e.logits;
            taps.middleRows(start, count) = tv;
        }
        out.logits.push_back(std::move(logits));
        out.taps.push_back(std::move(taps));
    }
    return out;
}

Tensor prepare_vertices(const TeacherOutputs& outputs, const SketchBank& bank, const ReprGraph& graph)
{
    const Index n = outputs.size();
    const Index e = bank.first.e;
    const Index ck = graph.vertex_channels();
    Tensor out({n, graph.vertices(), ck, e / ck});
    const Index per = out.size() / n;
    std::vector<Vector> features(outputs.taps.size());
    for (Index i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < outputs.taps.size(); ++t) features[t] = outputs.taps[t].row(i).transpose();
        const auto vertices = build_vertices(features, bank);
        out.data().segment(i * per, per) = soften_vertices(vertices, graph).data();
    }
    return out;
}

LossTerms total_loss(Var student_logits, Var student_tap, const DistillBatch& batch, const LogitsGraph& gl, Var gl_raw, const ReprGraph& gr,
                     Var gr_raw, const ModeWeights& w, Scalar bandwidth)
{
    LossTerms terms;
    std::vector<Var> parts;
    std::vector<Scalar> coeffs;
    auto push = [&](Var v, Scalar c) {
        parts.push_back(v);
        coeffs.push_back(c);
    };

    Var ce = mean(cross_entropy_rows(student_logits, batch.labels));
    terms.ce = ce.value()[0];
    if (w.ce != 0.0) push(ce, w.ce);

    if (w.soft != 0.0) {
        if (batch.teacher_logits.empty() || !gl_raw.valid()) throw std::invalid_argument("soft loss requested without teachers");
        Var soft = mean(logits_graph_loss(student_logits, batch.teacher_logits, gl, gl_raw));
        terms.soft = soft.value()[0];
        push(soft, w.soft);
    }
    if (w.repr != 0.0) {
        if (batch.softened_vertices.size() == 0 || !gr_raw.valid())
            throw std::invalid_argument("representation loss requested without teacher vertices");
        const auto& s = student_tap.shape();
        Var channels = reshape(student_tap, {s[0], s[1], s[2] * s[3]});
        Var repr = mean(repr_graph_loss(channels, batch.softened_vertices, gr, gr_raw, bandwidth));
        terms.repr = repr.value()[0];
        push(repr, w.repr);
    }
    if (parts.empty()) throw std::invalid_argument("all loss coefficients are zero");
    if (parts.size() == 1 && coeffs[0] == 1.0)
        terms.total = parts[0];
    else
        terms.total = weighted_sum(parts, coeffs);
    return terms;
}

Scalar batch_bandwidth(const RowMatrix& softened_student, const Tensor& softened_vertices, Index max_rows)
{
    const Index s = softened_student.cols();
    const Index a = softened_student.rows();
    const Index b = softened_vertices.size() / s;
    const Index total = a + b;
    const Index take = std::min(total, std::max<Index>(max_rows, 2));
    RowMatrix rows(take, s);
    const auto vm = softened_vertices.matrix(b, s);
    for (Index i = 0; i < take; ++i) {
        const Index j = i * total / take;
        if (j < a)
            rows.row(i) = softened_student.row(j);
        else
            rows.row(i) = vm.row(j - a);
    }
    return median_heuristic_bandwidth(rows);
}

std::string metrics_header()
{
    return "epoch,lr,train_ce,train_soft,train_repr,train_total,w_ce,w_soft,w_repr,decomposition_error,val_ce,val_accuracy,gl_weights,gr_weights";
}

std::string metrics_row(const EpochMetrics& m)
{
    std::ostringstream os;
    os << std::setprecision(17) << m.epoch << ',' << m.lr << ',' << m.train_ce << ',' << m.train_soft << ',' << m.train_repr << ','
       << m.train_total << ',' << m.weights.ce << ',' << m.weights.soft << ',' << m.weights.repr << ',' << m.decomposition_error << ','
       << m.val_ce << ',' << m.val_accuracy << ",\"" << m.gl_weights << "\",\"" << m.gr_weights << '"';
    return os.str();
}

EvalReport evaluate_predictions(std::span<const int> predictions, std::span<const int> labels, Index n_classes)
{
    if (labels.empty()) throw std::invalid_argument("cannot evaluate on an empty split");
    if (predictions.size() != labels.size()) throw std::invalid_argument("prediction and label counts differ");
    EvalReport r;
    r.total = static_cast<Index>(labels.size());
    r.confusion = Eigen::MatrixXi::Zero(n_classes, n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes || predictions[i] < 0 || predictions[i] >= n_classes)
            throw std::out_of_range("class index out of range");
        ++r.confusion(labels[i], predictions[i]);
    }
    r.accuracy = static_cast<Scalar>(r.confusion.trace()) / static_cast<Scalar>(r.total);
    for (Index c = 0; c < n_classes; ++c) {
        const int row = r.confusion.row(c).sum();
        r.per_class.push_back(row > 0 ? static_cast<Scalar>(r.confusion(c, c)) / row : std::numeric_limits<Scalar>::quiet_NaN());
    }
    return r;
}

EvalReport evaluate(const ClassifierNet& model, const std::vector<VideoClip>& clips, Index input_frames)
{
    const auto pred = predict(model, clips, input_frames);
    std::vector<int> labels;
    for (const auto& c : clips) labels.push_back(c.label);
    return evaluate_predictions(pred, labels, model.n_classes());
}

std::vector<std::string> teacher_names(std::span<const TeacherModel> teachers)
{
    std::vector<std::string> out;
    for (const auto& t : teachers) out.emplace_back(1, task_tag(t.task()));
    return out;
}

std::vector<std::string> vertex_names(std::span<const TeacherModel> teachers)
{
    const auto names = teacher_names(teachers);
    std::vector<std::string> out;
    for (auto [m, n] : teacher_pairs(static_cast<Index>(teachers.size())))
        out.push_back(names[static_cast<std::size_t>(m)] + names[static_cast<std::size_t>(n)]);
    return out;
}

Checkpoint student_checkpoint(const ExperimentConfig& cfg, const StudentModel& student, const LogitsGraph& gl, const ReprGraph& gr,
                              const SketchBank& bank, const Adam* adam, int epoch)
{
    Checkpoint c;
    c.config_hash = cfg.hash();
    for (const auto& name : student.params().names()) c.put("student/" + name, student.params().get(name));
    c.put("graph_l/raw", gl.raw_params());
    c.put("graph_r/raw", gr.raw_params());
    c.put("sketch/e", Tensor({1}, {static_cast<Scalar>(bank.first.e)}));
    c.put("sketch/shared", Tensor({1}, {bank.shared ? 1.0 : 0.0}));
    c.put("sketch/first/h", index_tensor(bank.first.h));
    c.put("sketch/first/s", sign_tensor(bank.first.s));
    c.put("sketch/second/h", index_tensor(bank.second.h));
    c.put("sketch/second/s", sign_tensor(bank.second.s));
    if (adam)
        for (const auto& [name, t] : adam->state()) c.put(name, t);
    c.put("meta/epoch", Tensor({1}, {static_cast<Scalar>(epoch)}));
    return c;
}

void restore_params(ParameterStore& store, const Checkpoint& ckpt, const std::string& prefix)
{
    for (const auto& name : store.names()) {
        const Tensor& src = ckpt.get(prefix + name);
        Tensor& dst = store.get(name);
        if (src.shape() != dst.shape())
            throw std::runtime_error("checkpoint entry " + prefix + name + " has shape " + shape_string(src.shape()) + ", expected " +
                                     shape_string(dst.shape()));
        dst.data() = src.data();
    }
}

LoadedStudent load_student(const std::filesystem::path& path, const ExperimentConfig& cfg, bool force)
{
    const Checkpoint c = load_checkpoint(path, cfg.hash(), force);
    const Index nt = static_cast<Index>(std::size(kAllTasks));
    LoadedStudent out{StudentModel(cfg.model, 0), LogitsGraph(nt, repeat(cfg.distill.teacher_temperature, nt)),
                      ReprGraph(nt, cfg.distill.vertex_channels, {}, cfg.distill.edge_dims), SketchBank{}, -1};
    restore_params(out.student.params(), c, "student/");
    if (c.get("graph_l/raw").shape() != out.gl.raw_params().shape() || c.get("graph_r/raw").shape() != out.gr.raw_params().shape())
        throw std::runtime_error("graph parameter shapes in " + path.string() + " do not match the config");
    out.gl.raw_params().data() = c.get("graph_l/raw").data();
    out.gr.raw_params().data() = c.get("graph_r/raw").data();
    const auto e = static_cast<Index>(c.get("sketch/e")[0]);
    out.bank.first = sketch_from(c, "first", e);
    out.bank.second = sketch_from(c, "second", e);
    out.bank.shared = c.get("sketch/shared")[0] != 0.0;
    out.epoch = static_cast<int>(c.get("meta/epoch")[0]);
    return out;
}

void save_teacher(const std::filesystem::path& path, const ExperimentConfig& cfg, const TeacherModel& teacher)
{
    Checkpoint c;
    c.config_hash = cfg.teacher_hash();
    c.put("meta/task", Tensor({1}, {static_cast<Scalar>(teacher.task())}));
    for (const auto& name : teacher.params().names()) c.put("teacher/" + name, teacher.params().get(name));
    save_checkpoint(path, c);
}

TeacherModel load_teacher(const std::filesystem::path& path, PretextTask task, const ExperimentConfig& cfg, bool force)
{
    const Checkpoint c = load_checkpoint(path, cfg.teacher_hash(), force);
    if (static_cast<int>(c.get("meta/task")[0]) != static_cast<int>(task))
        throw std::runtime_error(path.string() + " holds a different teacher task");
    TeacherModel t(task, cfg.model, cfg.teacher_seed);
    restore_params(t.params(), c, "teacher/");
    return t;
}

TrainResult train(const ExperimentConfig& cfg, const std::vector<VideoClip>& train_clips, const TeacherOutputs& train_out,
                  const std::vector<VideoClip>& val_clips, const TeacherOutputs& val_out, std::span<const TeacherModel> teachers,
                  const std::filesystem::path& out_dir, std::ostream* log)
{
    const auto t_start = Clock::now();
    cfg.validate();
    const DistillConfig& dc = cfg.distill;
    const ModeWeights w = mode_weights(dc.mode, dc.lambda, dc.beta);
    const bool needs_teachers = w.soft != 0.0 || w.repr != 0.0;
    const Index nt = static_cast<Index>(teachers.size());
    if (needs_teachers && nt < 2) throw std::invalid_argument("mode " + mode_name(dc.mode) + " needs at least two teachers");
    if (needs_teachers && (static_cast<Index>(train_out.logits.size()) != nt || train_out.size() != static_cast<Index>(train_clips.size())))
        throw std::invalid_argument("teacher outputs do not match the teachers / training clips");
    if (train_clips.empty()) throw std::invalid_argument("no training clips");
    (void)val_out;

    const Index graph_nodes = std::max<Index>(nt, 2);
    TrainResult r{StudentModel(cfg.model, mix_seed(dc.seed, 1)), LogitsGraph(graph_nodes, repeat(dc.teacher_temperature, graph_nodes)),
                  ReprGraph(graph_nodes, dc.vertex_channels, repeat(dc.vertex_temperature, graph_nodes * (graph_nodes - 1) / 2), dc.edge_dims),
                  SketchBank{}, {}, -1, -1.0, teachers_checksum(teachers), 0.0};
    const Index tap_len = train_out.taps.empty() ? 1 : train_out.taps.front().cols();
    r.bank = SketchBank::draw(tap_len, dc.sketch_dim, mix_seed(dc.seed, 3), dc.shared_sketch);
    const Tensor vertices = w.repr != 0.0 ? prepare_vertices(train_out, r.bank, r.gr) : Tensor{};

    const auto tnames = teacher_names(teachers);
    const auto vnames = vertex_names(teachers);
    Adam adam({dc.lr, dc.beta1, dc.beta2, 1e-8, dc.weight_decay});
    std::vector<Adam::Slot> slots;
    for (const auto& name : r.student.params().names()) slots.push_back({"student/" + name, &r.student.params().get(name)});
    if (w.learns_logits_graph) slots.push_back({"graph_l/raw", &r.gl.raw_params()});
    if (w.uses_repr_graph) slots.push_back({"graph_r/raw", &r.gr.raw_params()});
    r.gl.raw_params().set_requires_grad(w.learns_logits_graph);
    r.gr.raw_params().set_requires_grad(w.uses_repr_graph);

    std::ofstream csv;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        csv.open(out_dir / "metrics.csv", std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write " + (out_dir / "metrics.csv").string());
        csv << metrics_header() << '\n';
    }

    const Index input_frames = cfg.model.input_frames;
    std::vector<Index> order = iota_indices(static_cast<Index>(train_clips.size()));
    std::mt19937_64 shuffle_rng(mix_seed(dc.seed, 2));
    ParameterStore best = r.student.params();
    Tensor best_gl = r.gl.raw_params(), best_gr = r.gr.raw_params();
    Scalar best_val_ce = std::numeric_limits<Scalar>::infinity();

    for (int epoch = 0; epoch < dc.epochs; ++epoch) {
        const auto t_epoch = Clock::now();
        const Scalar lr = step_decay_lr(dc.lr, epoch, dc.lr_decay_every, dc.lr_decay_factor);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.weights = w;
        Index seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(dc.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(dc.batch_size));
            std::span<const Index> idx(order.data() + start, end - start);
            DistillBatch batch;
            for (Index i : idx) batch.labels.push_back(train_clips[static_cast<std::size_t>(i)].label);
            if (w.soft != 0.0)
                for (const RowMatrix& l : train_out.logits) batch.teacher_logits.push_back(gather_rows(l, idx));
            if (w.repr != 0.0) batch.softened_vertices = gather_leading(vertices, idx);

            LossTerms terms;
            Tape tape;
            try {
                BoundParams p = bind(tape, r.student.params());
                Var gl_raw = tape.leaf(r.gl.raw_params(), w.learns_logits_graph);
                Var gr_raw = tape.leaf(r.gr.raw_params(), w.uses_repr_graph);
                auto out = r.student.forward(p, tape.constant(batch_inputs(train_clips, idx, input_frames)));
                Scalar bw = 1.0;
                if (w.repr != 0.0) {
                    const auto& s = out.tap.shape();
                    const RowMatrix soft_student = softmax_rows(out.tap.value().matrix(s[0] * s[1], s[2] * s[3]));
                    bw = batch_bandwidth(soft_student, batch.softened_vertices, dc.bandwidth_sample);
                }
                terms = total_loss(out.logits, out.tap, batch, r.gl, gl_raw, r.gr, gr_raw, w, bw);
                tape.backward(terms.total);
                accumulate_grads(tape, p, r.student.params());
                if (w.learns_logits_graph) r.gl.raw_params().grad() += tape.grad(gl_raw);
                if (w.uses_repr_graph) r.gr.raw_params().grad() += tape.grad(gr_raw);
                // Adam keys its state by slot name; parameter grads live on the tensors.
                adam.step(slots, lr);
            } catch (const std::domain_error& e) {
                throw TrainingDiverged("distillation diverged at epoch " + std::to_string(epoch) + " batch " +
                                       std::to_string(start / static_cast<std::size_t>(dc.batch_size)) + ": " + e.what() +
                                       (out_dir.empty() ? std::string() : "; last good state kept in " + (out_dir / "last.ckpt").string()));
            }
            const auto b = static_cast<Scalar>(idx.size());
            m.train_ce += terms.ce * b;
            m.train_soft += terms.soft * b;
            m.train_repr += terms.repr * b;
            m.train_total += terms.total.value()[0] * b;
            seen += static_cast<Index>(idx.size());
        }
        const auto n = static_cast<Scalar>(seen);
        m.train_ce /= n;
        m.train_soft /= n;
        m.train_repr /= n;
        m.train_total /= n;
        m.decomposition_error = std::abs(m.train_total - (w.ce * m.train_ce + w.soft * m.train_soft + w.repr * m.train_repr));
        if (m.decomposition_error > 1e-9)
            throw std::logic_error("loss decomposition identity violated by " + std::to_string(m.decomposition_error));

        if (!val_clips.empty()) {
            const auto all = iota_indices(static_cast<Index>(val_clips.size()));
            Index correct = 0;
            for (std::size_t start = 0; start < all.size(); start += 64) {
                std::span<const Index> idx(all.data() + start, std::min<std::size_t>(64, all.size() - start));
                const auto e = r.student.forward_with_tap(batch_inputs(val_clips, idx, input_frames));
                for (Index i = 0; i < e.logits.rows(); ++i) {
                    const int label = val_clips[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])].label;
                    m.val_ce += cross_entropy(e.logits.row(i).transpose(), label);
                    Index arg = 0;
                    e.logits.row(i).maxCoeff(&arg);
                    correct += arg == label;
                }
            }
            m.val_ce /= static_cast<Scalar>(val_clips.size());
            m.val_accuracy = static_cast<Scalar>(correct) / static_cast<Scalar>(val_clips.size());
        }
        if (nt >= 2) {
            m.gl_weights = edge_weight_report(r.gl, tnames).to_cell();
            m.gr_weights = edge_weight_report(r.gr, vnames).to_cell();
        }
        m.seconds = seconds_since(t_epoch);

        const bool improved = m.val_accuracy > r.best_val_accuracy || (m.val_accuracy == r.best_val_accuracy && m.val_ce < best_val_ce);
        if (improved) {
            r.best_val_accuracy = m.val_accuracy;
            best_val_ce = m.val_ce;
            r.best_epoch = epoch;
            best = r.student.params();
            best_gl = r.gl.raw_params();
            best_gr = r.gr.raw_params();
        }
        if (!out_dir.empty()) {
            csv << metrics_row(m) << '\n' << std::flush;
            save_checkpoint(out_dir / "last.ckpt", student_checkpoint(cfg, r.student, r.gl, r.gr, r.bank, &adam, epoch));
            if (improved) save_checkpoint(out_dir / "best.ckpt", student_checkpoint(cfg, r.student, r.gl, r.gr, r.bank, &adam, epoch));
        }
        if (log)
            *log << mode_name(dc.mode) << " seed " << dc.seed << " epoch " << std::setw(3) << epoch << "  lr " << std::setprecision(4) << lr
                 << "  train " << std::setprecision(5) << m.train_total << " (ce " << m.train_ce << " soft " << m.train_soft << " repr "
                 << m.train_repr << ")  val acc " << std::setprecision(4) << m.val_accuracy << '\n'
                 << std::flush;
        r.history.push_back(std::move(m));
    }

    if (teachers_checksum(teachers) != r.teacher_checksum) throw std::logic_error("teacher parameters changed during distillation");
    if (r.best_epoch >= 0) {
        r.student.params() = best;
        r.gl.raw_params().data() = best_gl.data();
        r.gr.raw_params().data() = best_gr.data();
    }
    r.seconds = seconds_since(t_start);

    if (!out_dir.empty()) {
        nlohmann::ordered_json s;
        s["mode"] = mode_name(dc.mode);
        s["seed"] = dc.seed;
        s["config_hash"] = hex64(cfg.hash());
        s["epochs"] = dc.epochs;
        s["best_epoch"] = r.best_epoch;
        s["best_val_accuracy"] = r.best_val_accuracy;
        s["student_parameters"] = r.student.parameter_count();
        s["teacher_checksum"] = hex64(r.teacher_checksum);
        if (!r.history.empty()) {
            s["final_train_total"] = r.history.back().train_total;
            s["final_val_accuracy"] = r.history.back().val_accuracy;
        }
        if (nt >= 2) {
            s["logits_graph"] = edge_weight_report(r.gl, tnames).to_cell();
            s["repr_graph"] = edge_weight_report(r.gr, vnames).to_cell();
        }
        s["wall_clock_seconds"] = r.seconds;
        std::ofstream(out_dir / "summary.txt") << s.dump(2) << '\n';
    }
    return r;
}

} // namespace gkd
