#include "gkd/video.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

namespace gkd {

std::string to_string(ShapeKind s)
{
    switch (s) {
    case ShapeKind::Square: return "square";
    case ShapeKind::Disk: return "disk";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Cross: return "cross";
    }
    return "?";
}

std::string to_string(Direction d)
{
    switch (d) {
    case Direction::Right: return "right";
    case Direction::Left: return "left";
    case Direction::Down: return "down";
    case Direction::Up: return "up";
    }
    return "?";
}

void GeometryConfig::validate() const
{
    if (frames < 4) throw std::invalid_argument("clips need at least 4 frames");
    if (channels < 1 || height < 1 || width < 1) throw std::invalid_argument("frame dimensions must be positive");
    if (object_size < 1 || object_size > std::min(height, width))
        throw std::invalid_argument("object of size " + std::to_string(object_size) + " does not fit a " + std::to_string(height) +
                                    "x" + std::to_string(width) + " frame");
    if (min_speed < 0 || max_speed < min_speed) throw std::invalid_argument("invalid speed range");
    if (object_size + max_speed * (frames - 1) > std::min(height, width))
        throw std::invalid_argument("object cannot stay inside the frame for the whole clip at max speed");
    if (noise < 0.0 || distractors < 0) throw std::invalid_argument("invalid noise/distractor settings");
}

ShapeKind class_shape(int label) { return static_cast<ShapeKind>(label % 2 + 2 * (label / 8)); }
Direction class_direction(int label) { return static_cast<Direction>((label / 2) % 4); }
std::string class_name(int label) { return to_string(class_shape(label)) + "/" + to_string(class_direction(label)); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

bool shape_covers(ShapeKind shape, Index size, Index dy, Index dx)
{
    const Scalar c = 0.5 * static_cast<Scalar>(size - 1);
    switch (shape) {
    case ShapeKind::Square: return true;
    case ShapeKind::Disk: {
        const Scalar r = 0.5 * static_cast<Scalar>(size) + 0.25;
        return (dy - c) * (dy - c) + (dx - c) * (dx - c) <= r * r - 0.5 * r;
    }
    case ShapeKind::Triangle: {
        const Scalar half = 0.5 * static_cast<Scalar>(dy + 1);
        return std::abs(static_cast<Scalar>(dx) - c) <= half;
    }
    case ShapeKind::Cross: {
        const Index t = std::max<Index>(1, size / 3);
        const Index lo = (size - t) / 2;
        return (dy >= lo && dy < lo + t) || (dx >= lo && dx < lo + t);
    }
    }
    return false;
}

void draw(Tensor& frames, const ObjectTrack& obj, Index t)
{
    const Index ch = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
    for (Index dy = 0; dy < obj.size; ++dy)
        for (Index dx = 0; dx < obj.size; ++dx) {
            if (!shape_covers(obj.shape, obj.size, dy, dx)) continue;
            const Index y = obj.y_at(t) + dy, x = obj.x_at(t) + dx;
            if (y < 0 || y >= h || x < 0 || x >= w) continue;
            for (Index c = 0; c < ch; ++c) {
                Scalar& px = frames[((t * ch + c) * h + y) * w + x];
                px = std::max(px, obj.intensity);
            }
        }
}

std::pair<Index, Index> velocity_for(Direction d, Index speed)
{
    switch (d) {
    case Direction::Right: return {speed, 0};
    case Direction::Left: return {-speed, 0};
    case Direction::Down: return {0, speed};
    case Direction::Up: return {0, -speed};
    }
    return {0, 0};
}

/// Place an object so it stays fully inside the frame for all frames.
void place(ObjectTrack& obj, const GeometryConfig& g, std::mt19937_64& rng)
{
    const Index span = g.frames - 1;
    auto pick = [&](Index extent, Index v) {
        const Index lo = std::max<Index>(0, -v * span);
        const Index hi = extent - obj.size - std::max<Index>(0, v * span);
        if (hi < lo) throw std::invalid_argument("invalid geometry: object leaves the frame");
        return std::uniform_int_distribution<Index>(lo, hi)(rng);
    };
    obj.x0 = pick(g.width, obj.vx);
    obj.y0 = pick(g.height, obj.vy);
}

} // namespace

VideoClip render_clip(const ClipMeta& meta, int label, const GeometryConfig& g)
{
    if (g.frames < 4) throw std::invalid_argument("clips need at least 4 frames");
    if (meta.target.size > std::min(g.height, g.width)) throw std::invalid_argument("invalid geometry: object larger than frame");
    VideoClip clip;
    clip.label = label;
    clip.meta = meta;
    clip.frames = Tensor({g.frames, g.channels, g.height, g.width});
    for (Index t = 0; t < g.frames; ++t) {
        for (const auto& d : meta.distractors) draw(clip.frames, d, t);
        draw(clip.frames, meta.target, t);
    }
    if (g.noise > 0.0) {
        std::mt19937_64 rng(meta.noise_seed);
        std::normal_distribution<Scalar> n(0.0, g.noise);
        for (Index i = 0; i < clip.frames.size(); ++i) clip.frames[i] = std::clamp(clip.frames[i] + n(rng), 0.0, 1.0);
    }
    return clip;
}

VideoClip generate_clip(std::uint64_t seed, Index index, int n_classes, const GeometryConfig& g)
{
    if (n_classes < 2 || n_classes > kMaxClasses) throw std::invalid_argument("n_classes must be in [2, 16]");
    g.validate();
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
    const int label = static_cast<int>(index % n_classes);
    std::uniform_int_distribution<Index> speed(std::max<Index>(g.min_speed, 1), std::max<Index>(g.max_speed, 1));
    std::uniform_real_distribution<Scalar> bright(g.target_min_intensity, 1.0);
    std::uniform_real_distribution<Scalar> dim(0.5 * g.distractor_max_intensity, g.distractor_max_intensity);

    ClipMeta meta;
    meta.target.shape = class_shape(label);
    meta.target.size = g.object_size;
    std::tie(meta.target.vx, meta.target.vy) = velocity_for(class_direction(label), speed(rng));
    meta.target.intensity = bright(rng);
    place(meta.target, g, rng);
    for (Index d = 0; d < g.distractors; ++d) {
        ObjectTrack o;
        o.shape = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, 3)(rng));
        o.size = g.object_size;
        const auto dir = static_cast<Direction>(std::uniform_int_distribution<int>(0, 3)(rng));
        std::tie(o.vx, o.vy) = velocity_for(dir, std::uniform_int_distribution<Index>(0, g.max_speed)(rng));
        o.intensity = dim(rng);
        place(o, g, rng);
        meta.distractors.push_back(o);
    }
    meta.noise_seed = rng();
    return render_clip(meta, label, g);
}

std::vector<VideoClip> generate_dataset(std::uint64_t seed, Index n_clips, int n_classes, const GeometryConfig& g)
{
    if (n_clips < 1) throw std::invalid_argument("dataset needs at least one clip");
    std::vector<VideoClip> out;
    out.reserve(static_cast<std::size_t>(n_clips));
    for (Index i = 0; i < n_clips; ++i) out.push_back(generate_clip(seed, i, n_classes, g));
    return out;
}

Tensor VideoClip::frame(Index t) const
{
    const Index n = channels() * height() * width();
    return Tensor({channels(), height(), width()}, frames.data().segment(t * n, n));
}

RowMatrix VideoClip::gray(Index t) const
{
    const Index hw = height() * width();
    RowMatrix g = RowMatrix::Zero(height(), width());
    for (Index c = 0; c < channels(); ++c)
        g += Eigen::Map<const RowMatrix>(frames.data().data() + (t * channels() + c) * hw, height(), width());
    return g / static_cast<Scalar>(channels());
}

Tensor clip_input(const VideoClip& clip, Index input_frames)
{
    if (input_frames < 1 || input_frames > clip.n_frames()) throw std::invalid_argument("input frame count exceeds clip length");
    const Index stride = clip.n_frames() / input_frames;
    const Index n = clip.channels() * clip.height() * clip.width();
    Tensor out({input_frames * clip.channels(), clip.height(), clip.width()});
    for (Index i = 0; i < input_frames; ++i) out.data().segment(i * n, n) = clip.frames.data().segment(i * stride * n, n);
    return out;
}

Tensor batch_inputs(const std::vector<VideoClip>& clips, std::span<const Index> indices, Index input_frames)
{
    if (indices.empty()) throw std::invalid_argument("empty batch");
    const VideoClip& first = clips.at(static_cast<std::size_t>(indices.front()));
    const Index per = input_frames * first.channels() * first.height() * first.width();
    Tensor out({static_cast<Index>(indices.size()), input_frames * first.channels(), first.height(), first.width()});
    for (std::size_t b = 0; b < indices.size(); ++b)
        out.data().segment(static_cast<Index>(b) * per, per) = clip_input(clips.at(static_cast<std::size_t>(indices[b])), input_frames).data();
    return out;
}

} // namespace gkd
