#pragma once

#include "gkd/dataset_io.hpp"
#include "gkd/models.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace gkd {

enum class AblationMode { Scratch, UniformKD, GlOnly, GrOnly, GlGr };

inline constexpr AblationMode kAllModes[] = {AblationMode::Scratch, AblationMode::UniformKD, AblationMode::GlOnly,
                                             AblationMode::GrOnly, AblationMode::GlGr};

std::string mode_name(AblationMode m);
AblationMode parse_mode(const std::string& s);

/// Coefficients of the three loss terms for a mode, plus which graphs are live.
struct ModeWeights {
    Scalar ce = 1.0;
    Scalar soft = 0.0;
    Scalar repr = 0.0;
    bool uses_logits_graph = false;
    bool learns_logits_graph = false;
    bool uses_repr_graph = false;
};
ModeWeights mode_weights(AblationMode mode, Scalar lambda, Scalar beta);

struct DistillConfig {
    Scalar lambda = 0.6;
    Scalar beta = 0.5;
    Scalar teacher_temperature = 4.0;
    Scalar vertex_temperature = 4.0;
    int epochs = 60;
    Index batch_size = 32;
    Scalar lr = 0.01;
    int lr_decay_every = 20;
    Scalar lr_decay_factor = 0.5;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.999;
    Scalar weight_decay = 0.0;
    std::uint64_t seed = 1;
    AblationMode mode = AblationMode::GlGr;
    Index sketch_dim = 256;
    Index vertex_channels = 16;
    bool shared_sketch = false;
    Index edge_dims = 1;
    Index bandwidth_sample = 512;

    void validate() const;
};

struct ExperimentConfig {
    // data
    std::filesystem::path data_dir = "data";
    std::uint64_t data_seed = 7;
    DatasetSizes sizes;
    GeometryConfig geometry;
    // models (n_classes lives here)
    ModelConfig model;
    // teachers
    std::uint64_t teacher_seed = 11;
    PretextOptions pretext;
    TrainOptions pretrain{0.003, 10, 10, 32, 0.0, 11};
    TrainOptions finetune{0.003, 10, 10, 32, 0.0, 11};
    std::filesystem::path teacher_dir = "teachers";
    // distillation
    DistillConfig distill;
    // ablation
    int ablation_seeds = 5;
    std::vector<AblationMode> ablation_modes{std::begin(kAllModes), std::end(kAllModes)};
    std::filesystem::path run_dir = "runs";

    void validate() const;

    /// Apply one `key = value` setting; unknown keys throw.
    void set(const std::string& key, const std::string& value);
    /// Canonical `key = value` lines, in schema order.
    std::string to_text() const;
    /// Keys and one-line descriptions.
    static std::vector<std::pair<std::string, std::string>> schema();

    /// Hash of everything a distilled student depends on (data, models, teachers, distillation).
    std::uint64_t hash() const;
    /// Hash of what a pretrained teacher depends on.
    std::uint64_t teacher_hash() const;
};

/// Reads `key = value` lines; '#' starts a comment, blank lines are ignored.
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
void apply_setting(ExperimentConfig& cfg, const std::string& assignment);

/// Full-length schedule: 350 epochs, batch 128, decay 0.5 every 50 epochs.
void apply_paper_scale(ExperimentConfig& cfg);

std::string hex64(std::uint64_t v);

} // namespace gkd
