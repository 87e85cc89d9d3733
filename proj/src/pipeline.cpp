#include "gkd/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

namespace gkd {

namespace {

bool same_geometry(const GeometryConfig& a, const GeometryConfig& b)
{
    return a.frames == b.frames && a.channels == b.channels && a.height == b.height && a.width == b.width &&
           a.object_size == b.object_size && a.min_speed == b.min_speed && a.max_speed == b.max_speed &&
           a.distractors == b.distractors && a.noise == b.noise && a.target_min_intensity == b.target_min_intensity &&
           a.distractor_max_intensity == b.distractor_max_intensity;
}

} // namespace

Datasets generate_data(const ExperimentConfig& cfg)
{
    auto splits = generate_splits(cfg.data_seed, cfg.sizes, static_cast<int>(cfg.model.n_classes), cfg.geometry);
    return {std::move(splits[0]), std::move(splits[1]), std::move(splits[2])};
}

void save_data(const ExperimentConfig& cfg, const Datasets& data)
{
    save_split(cfg.data_dir / "train", data.train);
    save_split(cfg.data_dir / "val", data.val);
    save_split(cfg.data_dir / "test", data.test);
}

bool split_matches(const Split& split, const ExperimentConfig& cfg, Index expected_size)
{
    return split.info.n_classes == cfg.model.n_classes && static_cast<Index>(split.clips.size()) == expected_size &&
           same_geometry(split.info.geometry, cfg.geometry);
}

Datasets ensure_data(const ExperimentConfig& cfg, std::ostream* log)
{
    try {
        Datasets d{load_split(cfg.data_dir / "train"), load_split(cfg.data_dir / "val"), load_split(cfg.data_dir / "test")};
        if (split_matches(d.train, cfg, cfg.sizes.train) && split_matches(d.val, cfg, cfg.sizes.val) &&
            split_matches(d.test, cfg, cfg.sizes.test) && d.train.info.seed == split_seed(cfg.data_seed, 0) &&
            d.val.info.seed == split_seed(cfg.data_seed, 1) && d.test.info.seed == split_seed(cfg.data_seed, 2))
            return d;
        if (log) *log << "dataset in " << cfg.data_dir << " was generated with different settings; regenerating\n";
    } catch (const std::exception&) {
        if (log) *log << "generating dataset in " << cfg.data_dir << '\n';
    }
    Datasets d = generate_data(cfg);
    save_data(cfg, d);
    return d;
}

std::filesystem::path pretext_checkpoint_path(const ExperimentConfig& cfg, PretextTask task)
{
    return cfg.teacher_dir / (task_name(task) + ".pretext.ckpt");
}

std::filesystem::path teacher_checkpoint_path(const ExperimentConfig& cfg, PretextTask task)
{
    return cfg.teacher_dir / (task_name(task) + ".ckpt");
}

TeacherModel pretrain_stage(const ExperimentConfig& cfg, PretextTask task, const Datasets& data, PretrainReport* report)
{
    PretextOptions po = cfg.pretext;
    po.context_len = cfg.model.input_frames;
    po.sorting_n = cfg.model.sorting_n;
    const std::uint64_t seed = mix_seed(cfg.teacher_seed, static_cast<std::uint64_t>(task) + 1);
    // Pretext tasks see the unlabeled training clips only; validation clips give the held-out pretext split.
    const auto samples = make_pretext_samples(task, data.train.clips, po, seed);
    const auto held_out = make_pretext_samples(task, data.val.clips, po, mix_seed(seed, 1));
    TrainOptions opt = cfg.pretrain;
    opt.seed = seed;
    return pretrain_teacher(task, samples, held_out, cfg.model, opt, report);
}

FinetuneReport finetune_stage(const ExperimentConfig& cfg, TeacherModel& teacher, const Datasets& data)
{
    TrainOptions opt = cfg.finetune;
    opt.seed = mix_seed(cfg.teacher_seed, 0xF1 + static_cast<std::uint64_t>(teacher.task()));
    return finetune_classifier(teacher, data.train.clips, data.val.clips, cfg.model.input_frames, FinetunePolicy::Full, opt);
}

std::vector<TeacherModel> ensure_teachers(const ExperimentConfig& cfg, const Datasets& data, bool force, std::ostream* log,
                                          std::vector<TeacherReport>* reports)
{
    std::vector<TeacherModel> out;
    for (PretextTask task : kAllTasks) {
        TeacherReport rep;
        rep.task = task;
        const auto path = teacher_checkpoint_path(cfg, task);
        std::optional<TeacherModel> teacher;
        if (std::filesystem::exists(path)) {
            try {
                teacher = load_teacher(path, task, cfg, force);
                if (log) *log << "loaded " << task_name(task) << " teacher from " << path << '\n';
            } catch (const CheckpointMismatch&) {
                if (log) *log << path << " belongs to another config; retraining\n";
            }
        }
        if (!teacher) {
            const auto pre = pretext_checkpoint_path(cfg, task);
            if (std::filesystem::exists(pre)) {
                try {
                    teacher = load_teacher(pre, task, cfg, force);
                } catch (const CheckpointMismatch&) {
                }
            }
            if (!teacher) {
                if (log) *log << "pretraining " << task_name(task) << " teacher\n" << std::flush;
                teacher = pretrain_stage(cfg, task, data, &rep.pretext);
                save_teacher(pre, cfg, *teacher);
                if (log)
                    *log << "  " << rep.pretext.epochs_run << " epochs, held-out pretext loss " << rep.pretext.val_loss << ", metric "
                         << rep.pretext.val_metric << '\n';
            }
            if (log) *log << "fine-tuning " << task_name(task) << " teacher\n" << std::flush;
            const FinetuneReport ft = finetune_stage(cfg, *teacher, data);
            rep.finetune_val_accuracy = ft.val_accuracy;
            save_teacher(path, cfg, *teacher);
            if (log) *log << "  val accuracy " << ft.val_accuracy << '\n';
        }
        rep.parameters = teacher->parameter_count();
        if (reports) reports->push_back(rep);
        out.push_back(std::move(*teacher));
    }
    return out;
}

} // namespace gkd
