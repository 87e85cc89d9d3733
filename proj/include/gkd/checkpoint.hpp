#pragma once

#include "gkd/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gkd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned binary container of named float64 tensors.
///
/// Layout (little endian): "GKDCKPT\0", u32 version, u64 config hash,
/// u32 entry count, then per entry: u32 name length, name bytes, u32 rank,
/// rank x u64 dims, raw float64 data.
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::uint64_t config_hash = 0;
    std::vector<std::pair<std::string, Tensor>> entries;

    void put(const std::string& name, const Tensor& t);
    bool contains(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    /// Names starting with `prefix`, with the prefix stripped.
    std::vector<std::pair<std::string, Tensor>> with_prefix(const std::string& prefix) const;
};

class CheckpointMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes to `<path>.tmp` and renames, so an existing file is only replaced by a complete one.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws CheckpointMismatch when `expected_hash` differs from the stored hash and `force` is false.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash, bool force = false);
/// Loads without any hash check.
Checkpoint read_checkpoint(const std::filesystem::path& path);

} // namespace gkd
