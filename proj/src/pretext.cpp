#include "gkd/pretext.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace gkd {

char task_tag(PretextTask t) { return "SMTP"[static_cast<int>(t)]; }

std::string task_name(PretextTask t)
{
    switch (t) {
    case PretextTask::Sorting: return "sorting";
    case PretextTask::Egomotion: return "egomotion";
    case PretextTask::Tracking: return "tracking";
    case PretextTask::Prediction: return "prediction";
    }
    return "?";
}

PretextTask parse_task(const std::string& s)
{
    for (PretextTask t : kAllTasks)
        if (s == task_name(t) || (s.size() == 1 && s[0] == task_tag(t))) return t;
    throw std::invalid_argument("unknown pretext task '" + s + "' (expected sorting|egomotion|tracking|prediction or S|M|T|P)");
}

Index sorting_label_count(Index n)
{
    Index f = 1;
    for (Index i = 2; i <= n; ++i) f *= i;
    return f / 2;
}

namespace {

std::vector<std::vector<Index>> canonical_permutations(Index n)
{
    std::vector<Index> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    std::vector<std::vector<Index>> out;
    do {
        if (p.front() < p.back()) out.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    return out;
}

} // namespace

int sorting_label(const std::vector<Index>& perm)
{
    if (perm.size() < 2) throw std::invalid_argument("sorting needs at least two frames");
    std::vector<Index> p = perm;
    if (p.front() > p.back()) std::reverse(p.begin(), p.end());
    const auto all = canonical_permutations(static_cast<Index>(p.size()));
    auto it = std::find(all.begin(), all.end(), p);
    if (it == all.end()) throw std::invalid_argument("not a permutation of 0..n-1");
    return static_cast<int>(it - all.begin());
}

std::vector<Index> sorting_permutation(int label, Index n)
{
    const auto all = canonical_permutations(n);
    if (label < 0 || label >= static_cast<int>(all.size())) throw std::out_of_range("sorting label out of range");
    return all[static_cast<std::size_t>(label)];
}

namespace {

Tensor gray_frame(const VideoClip& clip, Index t)
{
    RowMatrix g = clip.gray(t);
    return Tensor({1, g.rows(), g.cols()}, Eigen::Map<const Vector>(g.data(), g.size()));
}

} // namespace

PretextSample make_sorting_sample(const VideoClip& clip, Index n, std::mt19937_64& rng)
{
    if (n < 3 || n > 4) throw std::invalid_argument("sorting tuples must have 3 or 4 frames");
    if (n > clip.n_frames()) throw std::invalid_argument("sorting tuple longer than the clip");
    std::vector<Index> frames(static_cast<std::size_t>(clip.n_frames()));
    std::iota(frames.begin(), frames.end(), 0);
    std::shuffle(frames.begin(), frames.end(), rng);
    frames.resize(static_cast<std::size_t>(n));
    std::sort(frames.begin(), frames.end());

    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    PretextSample s;
    s.task = PretextTask::Sorting;
    s.label = sorting_label(perm);
    for (Index p : perm) s.inputs.push_back(gray_frame(clip, frames[static_cast<std::size_t>(p)]));
    return s;
}

std::optional<int> egomotion_label(Index gap, const EgomotionThresholds& th)
{
    if (gap < 0) gap = -gap;
    if (gap <= th.close_max) return kClose;
    if (gap >= th.far_min) return kFar;
    return std::nullopt;
}

PretextSample make_egomotion_sample(const VideoClip& clip, Index max_gap, std::mt19937_64& rng, const EgomotionThresholds& th)
{
    const Index f = clip.n_frames();
    if (max_gap >= f) throw std::invalid_argument("egomotion max_gap must be smaller than the clip length");
    if (th.close_max < 1 || th.far_min <= th.close_max || th.far_min > max_gap)
        throw std::invalid_argument("egomotion thresholds are incompatible with the clip length");
    const int label = std::bernoulli_distribution(0.5)(rng) ? kClose : kFar;
    const Index gap = label == kClose ? std::uniform_int_distribution<Index>(1, th.close_max)(rng)
                                      : std::uniform_int_distribution<Index>(th.far_min, max_gap)(rng);
    const Index start = std::uniform_int_distribution<Index>(0, f - 1 - gap)(rng);
    Index a = start, b = start + gap;
    if (std::bernoulli_distribution(0.5)(rng)) std::swap(a, b);
    PretextSample s;
    s.task = PretextTask::Egomotion;
    s.label = label;
    s.inputs = {clip.frame(a), clip.frame(b)};
    s.aux = {a, b};
    return s;
}

Scalar box_iou(Index y0, Index x0, Index y1, Index x1, Index size)
{
    const Index ih = std::max<Index>(0, std::min(y0, y1) + size - std::max(y0, y1));
    const Index iw = std::max<Index>(0, std::min(x0, x1) + size - std::max(x0, x1));
    const auto inter = static_cast<Scalar>(ih * iw);
    return inter / (2.0 * static_cast<Scalar>(size * size) - inter);
}

namespace {

Tensor crop(const VideoClip& clip, Index t, Index y, Index x, Index size)
{
    const Index ch = clip.channels(), h = clip.height(), w = clip.width();
    Tensor out({ch, size, size});
    for (Index c = 0; c < ch; ++c)
        for (Index dy = 0; dy < size; ++dy)
            for (Index dx = 0; dx < size; ++dx)
                out[(c * size + dy) * size + dx] = clip.frames[((t * ch + c) * h + y + dy) * w + x + dx];
    return out;
}

} // namespace

std::optional<PretextSample> make_tracking_sample(const VideoClip& clip, Index patch_size, Index delta, std::mt19937_64& rng)
{
    const Index h = clip.height(), w = clip.width(), f = clip.n_frames();
    if (patch_size < 1 || patch_size >= std::min(h, w)) throw std::invalid_argument("patch size must be smaller than the frame");
    if (delta < 0 || delta >= f) throw std::invalid_argument("tracking offset must lie within the clip");
    const Index t = std::uniform_int_distribution<Index>(0, f - 1 - delta)(rng);
    const ObjectTrack& obj = clip.meta.target;
    const Index ay = obj.cy_at(t) - patch_size / 2, ax = obj.cx_at(t) - patch_size / 2;
    const Index py = obj.cy_at(t + delta) - patch_size / 2, px = obj.cx_at(t + delta) - patch_size / 2;
    auto inside = [&](Index y, Index x) { return y >= 0 && x >= 0 && y + patch_size <= h && x + patch_size <= w; };
    if (!inside(ay, ax) || !inside(py, px)) return std::nullopt;

    std::uniform_int_distribution<Index> ry(0, h - patch_size), rx(0, w - patch_size);
    Index ny = 0, nx = 0;
    bool found = false;
    for (int attempt = 0; attempt < 256 && !found; ++attempt) {
        ny = ry(rng);
        nx = rx(rng);
        found = box_iou(ny, nx, py, px, patch_size) <= 0.25;
    }
    if (!found) return std::nullopt;

    PretextSample s;
    s.task = PretextTask::Tracking;
    s.inputs = {crop(clip, t, ay, ax, patch_size), crop(clip, t + delta, py, px, patch_size),
                crop(clip, t + delta, ny, nx, patch_size)};
    s.aux = {ay, ax, py, px, ny, nx, t, delta};
    return s;
}

PretextSample make_prediction_sample(const VideoClip& clip, Index context_len)
{
    if (context_len < 1 || context_len >= clip.n_frames()) throw std::invalid_argument("prediction context must be shorter than the clip");
    PretextSample s;
    s.task = PretextTask::Prediction;
    for (Index t = 0; t < context_len; ++t) s.inputs.push_back(clip.frame(t));
    s.target = clip.frame(context_len);
    return s;
}

std::vector<PretextSample> make_pretext_samples(PretextTask task, const std::vector<VideoClip>& clips, const PretextOptions& opt,
                                                std::uint64_t seed)
{
    std::vector<PretextSample> out;
    std::mt19937_64 rng(mix_seed(seed, 0x5E7 + static_cast<std::uint64_t>(task)));
    for (Index round = 0; round < opt.samples_per_clip; ++round)
        for (const VideoClip& clip : clips) {
            switch (task) {
            case PretextTask::Sorting: out.push_back(make_sorting_sample(clip, opt.sorting_n, rng)); break;
            case PretextTask::Egomotion: out.push_back(make_egomotion_sample(clip, opt.egomotion_max_gap, rng, opt.egomotion)); break;
            case PretextTask::Tracking:
                if (auto s = make_tracking_sample(clip, opt.patch_size, opt.tracking_delta, rng)) out.push_back(std::move(*s));
                break;
            case PretextTask::Prediction: out.push_back(make_prediction_sample(clip, opt.context_len)); break;
            }
        }
    return out;
}

} // namespace gkd
