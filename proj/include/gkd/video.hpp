#pragma once

#include "gkd/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gkd {

enum class ShapeKind { Square = 0, Disk = 1, Triangle = 2, Cross = 3 };
enum class Direction { Right = 0, Left = 1, Down = 2, Up = 3 };

std::string to_string(ShapeKind s);
std::string to_string(Direction d);

/// A sprite moving at constant integer velocity; position is the top-left corner.
struct ObjectTrack {
    ShapeKind shape = ShapeKind::Square;
    Index size = 8;
    Index x0 = 0;
    Index y0 = 0;
    Index vx = 0;
    Index vy = 0;
    Scalar intensity = 1.0;

    Index x_at(Index t) const { return x0 + vx * t; }
    Index y_at(Index t) const { return y0 + vy * t; }
    /// Integer pixel centre (top-left + size/2).
    Index cx_at(Index t) const { return x_at(t) + size / 2; }
    Index cy_at(Index t) const { return y_at(t) + size / 2; }
};

struct ClipMeta {
    ObjectTrack target;
    std::vector<ObjectTrack> distractors;
    std::uint64_t noise_seed = 0;
};

struct GeometryConfig {
    Index frames = 8;
    Index channels = 1;
    Index height = 32;
    Index width = 32;
    Index object_size = 10;
    Index min_speed = 1;
    Index max_speed = 2;
    Index distractors = 2;
    Scalar noise = 0.3;
    Scalar target_min_intensity = 0.7;
    Scalar distractor_max_intensity = 0.45;

    void validate() const;
};

/// Frames [F, ch, H, W] in [0, 1] with a class label and the motion that produced them.
struct VideoClip {
    Tensor frames;
    int label = 0;
    ClipMeta meta;

    Index n_frames() const { return frames.dim(0); }
    Index channels() const { return frames.dim(1); }
    Index height() const { return frames.dim(2); }
    Index width() const { return frames.dim(3); }
    /// Frame t as [ch, H, W].
    Tensor frame(Index t) const;
    /// Frame t averaged over channels, as [H, W].
    RowMatrix gray(Index t) const;
};

inline constexpr int kMaxClasses = 16;
/// Class k pairs a shape with a motion direction.
ShapeKind class_shape(int label);
Direction class_direction(int label);
std::string class_name(int label);

/// Rasterise a clip from explicit motion metadata (deterministic given meta.noise_seed).
VideoClip render_clip(const ClipMeta& meta, int label, const GeometryConfig& geometry);

/// Deterministic per (seed, index). Labels cycle 0..n_classes-1.
VideoClip generate_clip(std::uint64_t seed, Index index, int n_classes, const GeometryConfig& geometry);
std::vector<VideoClip> generate_dataset(std::uint64_t seed, Index n_clips, int n_classes, const GeometryConfig& geometry);

/// splitmix64 step; used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

/// Encoder input: `input_frames` evenly strided frames stacked along channels, [D*ch, H, W].
Tensor clip_input(const VideoClip& clip, Index input_frames);
/// Stack clip inputs for the given indices into [B, D*ch, H, W].
Tensor batch_inputs(const std::vector<VideoClip>& clips, std::span<const Index> indices, Index input_frames);

} // namespace gkd
