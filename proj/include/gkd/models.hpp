#pragma once

#include "gkd/nn.hpp"
#include "gkd/optim.hpp"
#include "gkd/pretext.hpp"

#include <cstdint>
#include <span>

namespace gkd {

/// Input geometry and architectures shared by teachers and the student.
struct ModelConfig {
    Index input_frames = 4;
    Index frame_channels = 1;
    Index height = 32;
    Index width = 32;
    Index n_classes = 8;
    std::vector<Index> teacher_channels{16, 32, 64, 32};
    std::vector<bool> teacher_downsample{true, true, true, false};
    std::vector<Index> student_channels{8, 16, 16};
    std::vector<bool> student_downsample{true, true, true};
    Index pretext_hidden = 64;
    Scalar triplet_margin = 1.0;
    Index sorting_n = 3;

    Index input_channels() const { return input_frames * frame_channels; }
    EncoderConfig teacher_encoder() const;
    EncoderConfig student_encoder() const;
    void validate() const;
};

/// Encoder + linear classification head on the globally pooled tap feature.
class ClassifierNet {
public:
    ClassifierNet(EncoderConfig encoder, Index n_classes, std::uint64_t seed);
    virtual ~ClassifierNet() = default;

    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }
    const EncoderConfig& encoder() const { return enc_; }
    Index n_classes() const { return classes_; }

    struct Output {
        Var logits;  // [N, c]
        Var tap;     // [N, C, H', W']
    };
    Output forward(const BoundParams& p, Var input) const;

    struct Eval {
        RowMatrix logits;
        Tensor tap;
    };
    /// Inference without gradients; one forward pass yields both outputs.
    Eval forward_with_tap(const Tensor& batch) const;

    /// Encoder plus classification head (auxiliary pretext heads excluded).
    Index parameter_count() const { return params_.count("enc.") + params_.count("head."); }
    Index encoder_parameter_count() const { return params_.count("enc."); }
    std::uint64_t checksum() const { return params_.checksum(); }

protected:
    EncoderConfig enc_;
    Index classes_;
    ParameterStore params_;
};

class StudentModel : public ClassifierNet {
public:
    StudentModel(const ModelConfig& cfg, std::uint64_t seed) : ClassifierNet(cfg.student_encoder(), cfg.n_classes, seed) {}
};

class TeacherModel : public ClassifierNet {
public:
    TeacherModel(PretextTask task, const ModelConfig& cfg, std::uint64_t seed);

    PretextTask task() const { return task_; }

    struct PretextOutput {
        Var loss;
        Scalar metric = 0.0;  // accuracy, triplet satisfaction rate, or MSE
    };
    /// Pretext objective on a batch: CE for sorting/egomotion, triplet hinge for
    /// tracking, MSE for prediction. Siamese inputs share the encoder.
    PretextOutput pretext_forward(const BoundParams& p, Tape& tape, std::span<const PretextSample* const> batch) const;

private:
    PretextTask task_;
    ModelConfig cfg_;
};

struct TrainOptions {
    Scalar lr = 0.003;
    int max_epochs = 20;
    int patience = 10;
    Index batch_size = 32;
    Scalar weight_decay = 0.0;
    std::uint64_t seed = 1;
};

struct PretrainReport {
    int epochs_run = 0;
    Scalar train_loss = 0.0;
    Scalar val_loss = 0.0;
    Scalar val_metric = 0.0;
};

/// Trains encoder + pretext head until the held-out pretext loss has not
/// improved for `patience` epochs or `max_epochs` is reached; keeps the best.
/// Throws std::runtime_error if the loss diverges.
TeacherModel pretrain_teacher(PretextTask task, const std::vector<PretextSample>& train, const std::vector<PretextSample>& held_out,
                              const ModelConfig& cfg, const TrainOptions& opt, PretrainReport* report = nullptr);

/// Evaluate the pretext objective on held-out samples.
PretrainReport evaluate_pretext(const TeacherModel& teacher, const std::vector<PretextSample>& samples, Index batch_size = 64);

enum class FinetunePolicy { HeadOnly, Full };

struct FinetuneReport {
    Scalar train_accuracy = 0.0;
    Scalar val_accuracy = 0.0;
};

/// Trains the classification head (and, for Full, the encoder) with cross entropy.
FinetuneReport finetune_classifier(ClassifierNet& model, const std::vector<VideoClip>& train, const std::vector<VideoClip>& val,
                                   Index input_frames, FinetunePolicy policy, const TrainOptions& opt);

/// Argmax predictions over a clip set.
std::vector<int> predict(const ClassifierNet& model, const std::vector<VideoClip>& clips, Index input_frames, Index batch_size = 64);

} // namespace gkd
