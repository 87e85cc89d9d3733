// Command-line driver: data generation, teacher training, distillation, evaluation and the ablation grid.
#include "gkd/ablation.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>

using namespace gkd;

namespace {

struct GlobalOptions {
    std::string config_path;
    std::vector<std::string> settings;
    std::optional<std::uint64_t> seed;
    std::string mode;
    bool paper_scale = false;
    bool force = false;
    int jobs = 0;
};

ExperimentConfig resolve(const GlobalOptions& g)
{
    ExperimentConfig cfg;
    if (!g.config_path.empty()) cfg = load_config(g.config_path);
    if (g.paper_scale) apply_paper_scale(cfg);
    for (const auto& s : g.settings) apply_setting(cfg, s);
    if (g.seed) cfg.distill.seed = *g.seed;
    if (!g.mode.empty()) cfg.distill.mode = parse_mode(g.mode);
    cfg.validate();
    return cfg;
}

void print_eval(const EvalReport& r, std::ostream& os)
{
    os << std::fixed << std::setprecision(2) << "accuracy " << 100.0 * r.accuracy << "% over " << r.total << " clips\nper class:";
    for (std::size_t c = 0; c < r.per_class.size(); ++c) os << ' ' << class_name(static_cast<int>(c)) << '=' << 100.0 * r.per_class[c];
    os << "\nconfusion (rows = true class):\n" << r.confusion << '\n';
}

int cmd_gen_data(const GlobalOptions& g)
{
    const ExperimentConfig cfg = resolve(g);
    if (g.force) {
        save_data(cfg, generate_data(cfg));
        std::cout << "regenerated dataset in " << cfg.data_dir << '\n';
    } else {
        ensure_data(cfg, &std::cout);
    }
    std::cout << cfg.sizes.train << " / " << cfg.sizes.val << " / " << cfg.sizes.test << " clips (train / val / test), " << cfg.model.n_classes
              << " classes\n";
    return 0;
}

int cmd_pretrain(const GlobalOptions& g, const std::string& task_arg)
{
    const ExperimentConfig cfg = resolve(g);
    const Datasets data = ensure_data(cfg, &std::cout);
    std::vector<PretextTask> tasks;
    if (task_arg == "all")
        tasks.assign(std::begin(kAllTasks), std::end(kAllTasks));
    else
        tasks.push_back(parse_task(task_arg));
    for (PretextTask t : tasks) {
        PretrainReport rep;
        const TeacherModel teacher = pretrain_stage(cfg, t, data, &rep);
        save_teacher(pretext_checkpoint_path(cfg, t), cfg, teacher);
        std::cout << task_name(t) << ": " << rep.epochs_run << " epochs, train loss " << rep.train_loss << ", held-out loss " << rep.val_loss
                  << ", held-out metric " << rep.val_metric << " -> " << pretext_checkpoint_path(cfg, t) << '\n';
    }
    return 0;
}

int cmd_finetune(const GlobalOptions& g)
{
    const ExperimentConfig cfg = resolve(g);
    const Datasets data = ensure_data(cfg, &std::cout);
    for (PretextTask t : kAllTasks) {
        const auto pre = pretext_checkpoint_path(cfg, t);
        if (!std::filesystem::exists(pre)) throw std::runtime_error("missing " + pre.string() + "; run `gkd pretrain " + task_name(t) + "` first");
        TeacherModel teacher = load_teacher(pre, t, cfg, g.force);
        const FinetuneReport rep = finetune_stage(cfg, teacher, data);
        save_teacher(teacher_checkpoint_path(cfg, t), cfg, teacher);
        std::cout << task_name(t) << ": train accuracy " << rep.train_accuracy << ", val accuracy " << rep.val_accuracy << '\n';
    }
    return 0;
}

int cmd_distill(const GlobalOptions& g, std::string out)
{
    const ExperimentConfig cfg = resolve(g);
    const Datasets data = ensure_data(cfg, &std::cout);
    const auto teachers = ensure_teachers(cfg, data, g.force, &std::cout);
    if (out.empty()) out = run_directory(cfg, cfg.distill.mode, cfg.distill.seed).string();
    const TeacherOutputs tr = compute_teacher_outputs(teachers, data.train.clips, cfg.model.input_frames);
    const TeacherOutputs va = compute_teacher_outputs(teachers, data.val.clips, cfg.model.input_frames);
    const TrainResult r = train(cfg, data.train.clips, tr, data.val.clips, va, teachers, out, &std::cout);
    const EvalReport ev = evaluate(r.student, data.test.clips, cfg.model.input_frames);
    write_run_result(out, {cfg.hash(), ev.accuracy, r.best_val_accuracy, r.best_epoch});
    std::cout << "best epoch " << r.best_epoch << " (val " << r.best_val_accuracy << ")\ntest ";
    print_eval(ev, std::cout);
    std::cout << edge_weight_report(r.gl, teacher_names(teachers)).to_text() << edge_weight_report(r.gr, vertex_names(teachers)).to_text();
    return 0;
}

int cmd_evaluate(const GlobalOptions& g, const std::string& ckpt, const std::string& split)
{
    const ExperimentConfig cfg = resolve(g);
    const Datasets data = ensure_data(cfg, &std::cout);
    const Split& s = split == "train" ? data.train : split == "val" ? data.val : data.test;
    const LoadedStudent st = load_student(ckpt, cfg, g.force);
    std::cout << "checkpoint " << ckpt << " (epoch " << st.epoch << "), split " << s.info.split << '\n';
    print_eval(evaluate(st.student, s.clips, cfg.model.input_frames), std::cout);
    return 0;
}

void print_checks(const AblationTable& t, std::ostream& os)
{
    const AblationRow* gg = t.find(AblationMode::GlGr);
    for (AblationMode other : {AblationMode::UniformKD, AblationMode::Scratch}) {
        const AblationRow* o = t.find(other);
        if (!gg || !o) continue;
        os << "gl_gr vs " << mode_name(other) << ": " << std::showpos << std::fixed << std::setprecision(2) << 100.0 * (gg->mean - o->mean)
           << std::noshowpos << " points -> " << (ordering_holds(*gg, *o) ? "ordering holds" : "ordering NOT met") << '\n';
    }
}

int cmd_ablate(const GlobalOptions& g)
{
    const ExperimentConfig cfg = resolve(g);
    const Datasets data = ensure_data(cfg, &std::cout);
    const auto teachers = ensure_teachers(cfg, data, g.force, &std::cout);
    const AblationTable t = run_ablation(cfg, data, teachers, g.jobs, &std::cout);
    std::cout << '\n' << t.to_text();
    print_checks(t, std::cout);
    std::cout << "grid time " << std::fixed << std::setprecision(1) << t.seconds / 60.0 << " min; table in " << (cfg.run_dir / "ablation.csv")
              << '\n';
    return 0;
}

int cmd_report(const GlobalOptions& g)
{
    const ExperimentConfig cfg = resolve(g);
    std::cout << "parameters: student " << StudentModel(cfg.model, 0).parameter_count();
    for (PretextTask t : kAllTasks) std::cout << ", " << task_name(t) << " teacher " << TeacherModel(t, cfg.model, 0).parameter_count();
    std::cout << "\n\n";
    const AblationTable table = collect_ablation(cfg);
    std::cout << table.to_text();
    print_checks(table, std::cout);
    const auto summary = run_directory(cfg, AblationMode::GlGr, cfg.distill.seed) / "summary.txt";
    if (std::ifstream in(summary); in) std::cout << "\n" << summary.string() << ":\n" << in.rdbuf();
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    tune_allocator();
    CLI::App app{"Graph-based multi-teacher distillation on synthetic video"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("-c,--config", g.config_path, "key = value config file")->check(CLI::ExistingFile);
    app.add_option("--set", g.settings, "override a config key (key=value), repeatable");
    app.add_option("--seed", g.seed, "run seed (distill.seed)");
    app.add_option("--mode", g.mode, "scratch | uniform_kd | gl_only | gr_only | gl_gr");
    app.add_flag("--paper-scale", g.paper_scale, "350 epochs, batch 128, decay every 50");
    app.add_flag("--force", g.force, "ignore config-hash mismatches / regenerate data");
    app.add_option("-j,--jobs", g.jobs, "parallel ablation runs (0 = all cores)");

    auto* gen = app.add_subcommand("gen-data", "generate train/val/test splits");
    std::string task = "all";
    auto* pre = app.add_subcommand("pretrain", "train teacher(s) on a pretext task");
    pre->add_option("task", task, "sorting | egomotion | tracking | prediction | all");
    auto* ft = app.add_subcommand("finetune", "fine-tune pretext teachers for classification");
    std::string out;
    auto* dist = app.add_subcommand("distill", "distill one student");
    dist->add_option("-o,--out", out, "run directory (default <run.dir>/<mode>_seed<seed>)");
    std::string ckpt, split = "test";
    auto* ev = app.add_subcommand("evaluate", "evaluate a student checkpoint");
    ev->add_option("checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    ev->add_option("--split", split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
    auto* abl = app.add_subcommand("ablate", "run the mode x seed grid");
    auto* rep = app.add_subcommand("report", "summarize finished runs");
    auto* schema = app.add_subcommand("config", "print the effective config");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return cmd_gen_data(g);
        if (*pre) return cmd_pretrain(g, task);
        if (*ft) return cmd_finetune(g);
        if (*dist) return cmd_distill(g, out);
        if (*ev) return cmd_evaluate(g, ckpt, split);
        if (*abl) return cmd_ablate(g);
        if (*rep) return cmd_report(g);
        if (*schema) {
            std::cout << resolve(g).to_text();
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
