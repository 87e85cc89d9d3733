#pragma once

#include "gkd/video.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace gkd {

inline constexpr int kGeneratorVersion = 1;

struct SplitInfo {
    std::string split;
    std::uint64_t seed = 0;
    int n_classes = 0;
    GeometryConfig geometry;
};

struct Split {
    SplitInfo info;
    std::vector<VideoClip> clips;
};

/// Writes `<dir>/clips.bin` (raw little-endian float64 frames, clip-major) and
/// `<dir>/manifest.txt` (shapes, seed, label map, per-clip motion metadata).
void save_split(const std::filesystem::path& dir, const Split& split);
Split load_split(const std::filesystem::path& dir);

/// Generates train/val/test under `root/<split>/` with split-specific seeds.
struct DatasetSizes {
    Index train = 300;
    Index val = 400;
    Index test = 400;
    Index total() const { return train + val + test; }
};
/// Seed of split 0 (train), 1 (val) or 2 (test).
std::uint64_t split_seed(std::uint64_t seed, int split_index);
std::vector<Split> generate_splits(std::uint64_t seed, const DatasetSizes& sizes, int n_classes, const GeometryConfig& geometry);

} // namespace gkd
