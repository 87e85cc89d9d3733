#pragma once

#include "gkd/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace gkd {

struct Datasets {
    Split train;
    Split val;
    Split test;
};

Datasets generate_data(const ExperimentConfig& cfg);
void save_data(const ExperimentConfig& cfg, const Datasets& data);
/// Loads `<data.dir>/{train,val,test}`; regenerates and saves when the
/// directory is missing or was written for different data settings.
Datasets ensure_data(const ExperimentConfig& cfg, std::ostream* log = nullptr);
/// True when a loaded split was produced by the given settings.
bool split_matches(const Split& split, const ExperimentConfig& cfg, Index expected_size);

std::filesystem::path pretext_checkpoint_path(const ExperimentConfig& cfg, PretextTask task);
std::filesystem::path teacher_checkpoint_path(const ExperimentConfig& cfg, PretextTask task);

struct TeacherReport {
    PretextTask task = PretextTask::Sorting;
    PretrainReport pretext;
    Scalar finetune_val_accuracy = 0.0;
    Index parameters = 0;
};

/// Pretext stage only.
TeacherModel pretrain_stage(const ExperimentConfig& cfg, PretextTask task, const Datasets& data, PretrainReport* report = nullptr);
/// Classification fine-tune of a pretext-trained teacher (full policy).
FinetuneReport finetune_stage(const ExperimentConfig& cfg, TeacherModel& teacher, const Datasets& data);

/// All four teachers, from `<teacher.dir>/<task>.ckpt` when present and
/// matching, otherwise pretrained, fine-tuned and saved.
std::vector<TeacherModel> ensure_teachers(const ExperimentConfig& cfg, const Datasets& data, bool force = false,
                                          std::ostream* log = nullptr, std::vector<TeacherReport>* reports = nullptr);

} // namespace gkd
