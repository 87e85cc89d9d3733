#pragma once

#include "gkd/pipeline.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gkd {

struct AblationRow {
    AblationMode mode = AblationMode::Scratch;
    std::vector<std::uint64_t> seeds;
    std::vector<Scalar> accuracies;  // test accuracy per finished seed
    std::vector<std::string> errors;
    Scalar mean = 0.0;
    Scalar stdev = 0.0;  // sample standard deviation (n - 1)
};

struct AblationTable {
    std::vector<AblationRow> rows;
    double seconds = 0.0;

    const AblationRow* find(AblationMode mode) const;
    std::string to_csv() const;
    std::string to_text() const;
};

/// Result of one finished (mode, seed) run, persisted as `<run>/result.txt`.
struct RunResult {
    std::uint64_t config_hash = 0;
    Scalar test_accuracy = 0.0;
    Scalar best_val_accuracy = 0.0;
    int best_epoch = -1;
};
std::optional<RunResult> read_run_result(const std::filesystem::path& run_dir);
void write_run_result(const std::filesystem::path& run_dir, const RunResult& r);

/// `<run.dir>/<mode>_seed<seed>`.
std::filesystem::path run_directory(const ExperimentConfig& cfg, AblationMode mode, std::uint64_t seed);
/// Config of one grid cell.
ExperimentConfig run_config(const ExperimentConfig& cfg, AblationMode mode, std::uint64_t seed);

/// Trains every (mode, seed) cell that has no finished result for the same
/// config hash, then writes `<run.dir>/ablation.csv`. Failed cells are
/// recorded in their row and the grid continues. `jobs` <= 0 uses all cores.
AblationTable run_ablation(const ExperimentConfig& cfg, const Datasets& data, std::span<const TeacherModel> teachers, int jobs = 0,
                           std::ostream* log = nullptr);

/// Table from finished runs on disk (no training).
AblationTable collect_ablation(const ExperimentConfig& cfg);

/// `a` beats `b` by at least one accuracy point, or their ±1 stdev intervals do not overlap with a above.
bool ordering_holds(const AblationRow& a, const AblationRow& b);

} // namespace gkd
