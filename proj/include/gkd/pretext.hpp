#pragma once

#include "gkd/video.hpp"

#include <optional>
#include <random>
#include <vector>

namespace gkd {

/// The four self-supervised tasks: frame sorting, temporal closeness
/// (egomotion), patch tracking, and next-frame prediction.
enum class PretextTask { Sorting = 0, Egomotion = 1, Tracking = 2, Prediction = 3 };

inline constexpr PretextTask kAllTasks[] = {PretextTask::Sorting, PretextTask::Egomotion, PretextTask::Tracking,
                                            PretextTask::Prediction};

char task_tag(PretextTask t);
std::string task_name(PretextTask t);
PretextTask parse_task(const std::string& s);

struct PretextSample {
    PretextTask task = PretextTask::Sorting;
    std::vector<Tensor> inputs;  // each [ch', H', W']
    int label = -1;              // sorting / egomotion
    Tensor target;               // prediction target frame
    std::vector<Index> aux;      // tracking: anchor (y,x), positive (y,x), negative (y,x), t, delta
};

/// Number of sorting classes: n!/2 (a permutation and its reverse share a class).
Index sorting_label_count(Index n);
/// Class of an arbitrary permutation of {0..n-1}.
int sorting_label(const std::vector<Index>& perm);
/// Canonical representative (perm[0] < perm[n-1]) of a class.
std::vector<Index> sorting_permutation(int label, Index n);

/// n grayscale frames of the clip shown in a permuted order; label = permutation class.
PretextSample make_sorting_sample(const VideoClip& clip, Index n, std::mt19937_64& rng);

struct EgomotionThresholds {
    Index close_max = 1;  // gap <= close_max -> close
    Index far_min = 4;    // gap >= far_min -> far
};
inline constexpr int kClose = 0;
inline constexpr int kFar = 1;

/// Label of a frame pair by its temporal gap; nullopt for ambiguous gaps.
std::optional<int> egomotion_label(Index gap, const EgomotionThresholds& th);
/// Frame pair with a close/far label drawn 50/50.
PretextSample make_egomotion_sample(const VideoClip& clip, Index max_gap, std::mt19937_64& rng, const EgomotionThresholds& th = {});

/// Anchor patch on the target at frame t, the tracked patch at t + delta, and a
/// random negative patch overlapping the positive by at most 25% IoU.
/// nullopt when the object's patch would leave the frame.
std::optional<PretextSample> make_tracking_sample(const VideoClip& clip, Index patch_size, Index delta, std::mt19937_64& rng);

/// First `context_len` frames in, frame `context_len` as the target.
PretextSample make_prediction_sample(const VideoClip& clip, Index context_len);

Scalar box_iou(Index y0, Index x0, Index y1, Index x1, Index size);

/// Task-specific sample set drawn from the clips (one attempt per clip per round).
struct PretextOptions {
    Index sorting_n = 3;
    Index egomotion_max_gap = 7;
    EgomotionThresholds egomotion;
    Index patch_size = 16;
    Index tracking_delta = 2;
    Index context_len = 4;
    Index samples_per_clip = 1;
};
std::vector<PretextSample> make_pretext_samples(PretextTask task, const std::vector<VideoClip>& clips, const PretextOptions& opt,
                                                std::uint64_t seed);

} // namespace gkd
