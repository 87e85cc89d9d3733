#pragma once

#include "gkd/checkpoint.hpp"
#include "gkd/config.hpp"
#include "gkd/graphs.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace gkd {

/// Frozen teacher outputs for a clip set, one entry per teacher.
struct TeacherOutputs {
    std::vector<RowMatrix> logits;  // [N, c]
    std::vector<RowMatrix> taps;    // [N, C_t*H'*W'] flattened tap features
    Index size() const { return logits.empty() ? 0 : logits.front().rows(); }
};

TeacherOutputs compute_teacher_outputs(std::span<const TeacherModel> teachers, const std::vector<VideoClip>& clips,
                                       Index input_frames, Index batch_size = 64);

/// Softened bilinear vertices of every clip: [N, K, C_k, S].
Tensor prepare_vertices(const TeacherOutputs& outputs, const SketchBank& bank, const ReprGraph& graph);

/// Per-batch distillation targets.
struct DistillBatch {
    std::vector<int> labels;
    std::vector<RowMatrix> teacher_logits;  // per teacher [B, c]
    Tensor softened_vertices;               // [B, K, C_k, S]; unused when the repr term is off
};

struct LossTerms {
    Var total;
    Scalar ce = 0.0;    // batch-mean cross entropy
    Scalar soft = 0.0;  // batch-mean logits-graph loss (0 when the mode skips it)
    Scalar repr = 0.0;  // batch-mean representation-graph loss (0 when the mode skips it)
};

/// w.ce·CE + w.soft·ℓ_s + w.repr·ℒ_r, each a batch mean; terms with a zero
/// coefficient are not evaluated. `student_tap` is [B, C_s, H', W'].
LossTerms total_loss(Var student_logits, Var student_tap, const DistillBatch& batch, const LogitsGraph& gl, Var gl_raw,
                     const ReprGraph& gr, Var gr_raw, const ModeWeights& w, Scalar bandwidth);

/// Median pairwise distance over (a deterministic subsample of) the rows of
/// both MMD operands.
Scalar batch_bandwidth(const RowMatrix& softened_student, const Tensor& softened_vertices, Index max_rows);

struct EpochMetrics {
    int epoch = 0;
    Scalar lr = 0.0;
    Scalar train_ce = 0.0;
    Scalar train_soft = 0.0;
    Scalar train_repr = 0.0;
    Scalar train_total = 0.0;
    ModeWeights weights;
    Scalar decomposition_error = 0.0;
    Scalar val_ce = 0.0;
    Scalar val_accuracy = 0.0;
    std::string gl_weights;
    std::string gr_weights;
    double seconds = 0.0;  // summary only; kept out of metrics.csv so reruns compare bitwise
};

/// Fixed metrics.csv header.
std::string metrics_header();
std::string metrics_row(const EpochMetrics& m);

struct EvalReport {
    Index total = 0;
    Scalar accuracy = 0.0;
    std::vector<Scalar> per_class;  // NaN for classes absent from the split
    Eigen::MatrixXi confusion;      // rows = true class, columns = prediction
};

EvalReport evaluate_predictions(std::span<const int> predictions, std::span<const int> labels, Index n_classes);
EvalReport evaluate(const ClassifierNet& model, const std::vector<VideoClip>& clips, Index input_frames);

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    StudentModel student;
    LogitsGraph gl;
    ReprGraph gr;
    SketchBank bank;
    std::vector<EpochMetrics> history;
    int best_epoch = -1;
    Scalar best_val_accuracy = 0.0;
    std::uint64_t teacher_checksum = 0;
    double seconds = 0.0;
};

/// Distills one student. With a non-empty `out_dir` it writes metrics.csv,
/// summary.txt, best.ckpt (best validation accuracy) and last.ckpt (end of the
/// latest finished epoch). The returned student carries the best-val weights.
TrainResult train(const ExperimentConfig& cfg, const std::vector<VideoClip>& train_clips, const TeacherOutputs& train_out,
                  const std::vector<VideoClip>& val_clips, const TeacherOutputs& val_out, std::span<const TeacherModel> teachers,
                  const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr);

/// Checkpoint helpers for distilled students.
Checkpoint student_checkpoint(const ExperimentConfig& cfg, const StudentModel& student, const LogitsGraph& gl, const ReprGraph& gr,
                              const SketchBank& bank, const Adam* adam, int epoch);
struct LoadedStudent {
    StudentModel student;
    LogitsGraph gl;
    ReprGraph gr;
    SketchBank bank;
    int epoch = -1;
};
LoadedStudent load_student(const std::filesystem::path& path, const ExperimentConfig& cfg, bool force = false);

/// Teacher checkpoints (parameters of encoder, pretext head and classifier head).
void save_teacher(const std::filesystem::path& path, const ExperimentConfig& cfg, const TeacherModel& teacher);
TeacherModel load_teacher(const std::filesystem::path& path, PretextTask task, const ExperimentConfig& cfg, bool force = false);

/// Restore named tensors into a store; every store entry must be present with a matching shape.
void restore_params(ParameterStore& store, const Checkpoint& ckpt, const std::string& prefix);

std::vector<std::string> teacher_names(std::span<const TeacherModel> teachers);
std::vector<std::string> vertex_names(std::span<const TeacherModel> teachers);

} // namespace gkd
