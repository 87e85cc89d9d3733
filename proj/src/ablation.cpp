#include "gkd/ablation.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace gkd {

namespace {

void finish_row(AblationRow& row)
{
    const auto n = static_cast<Scalar>(row.accuracies.size());
    row.mean = row.stdev = 0.0;
    if (row.accuracies.empty()) return;
    for (Scalar a : row.accuracies) row.mean += a / n;
    if (row.accuracies.size() > 1) {
        Scalar ss = 0.0;
        for (Scalar a : row.accuracies) ss += (a - row.mean) * (a - row.mean);
        row.stdev = std::sqrt(ss / (n - 1.0));
    }
}

std::uint64_t seed_of(const ExperimentConfig& cfg, int i) { return cfg.distill.seed + static_cast<std::uint64_t>(i); }

} // namespace

const AblationRow* AblationTable::find(AblationMode mode) const
{
    for (const auto& r : rows)
        if (r.mode == mode) return &r;
    return nullptr;
}

std::string AblationTable::to_csv() const
{
    std::ostringstream os;
    os << "mode,runs,mean_accuracy,stdev_accuracy,accuracies,errors\n" << std::setprecision(17);
    for (const auto& r : rows) {
        os << mode_name(r.mode) << ',' << r.accuracies.size() << ',' << r.mean << ',' << r.stdev << ",\"";
        for (std::size_t i = 0; i < r.accuracies.size(); ++i) os << (i ? ";" : "") << r.accuracies[i];
        os << "\",\"";
        for (std::size_t i = 0; i < r.errors.size(); ++i) os << (i ? "; " : "") << r.errors[i];
        os << "\"\n";
    }
    return os.str();
}

std::string AblationTable::to_text() const
{
    std::ostringstream os;
    os << std::left << std::setw(12) << "mode" << std::right << std::setw(6) << "runs" << std::setw(10) << "mean %" << std::setw(10)
       << "stdev" << "  per seed\n";
    os << std::fixed;
    for (const auto& r : rows) {
        os << std::left << std::setw(12) << mode_name(r.mode) << std::right << std::setw(6) << r.accuracies.size() << std::setw(10)
           << std::setprecision(2) << 100.0 * r.mean << std::setw(10) << 100.0 * r.stdev << "  ";
        for (Scalar a : r.accuracies) os << std::setprecision(1) << 100.0 * a << ' ';
        if (!r.errors.empty()) os << " [" << r.errors.size() << " failed]";
        os << '\n';
    }
    return os.str();
}

std::optional<RunResult> read_run_result(const std::filesystem::path& run_dir)
{
    std::ifstream in(run_dir / "result.txt");
    if (!in) return std::nullopt;
    RunResult r;
    bool have_hash = false, have_acc = false;
    std::string key, eq, value;
    while (in >> key >> eq >> value) {
        if (key == "config_hash") {
            r.config_hash = std::stoull(value, nullptr, 16);
            have_hash = true;
        } else if (key == "test_accuracy") {
            r.test_accuracy = std::stod(value);
            have_acc = true;
        } else if (key == "best_val_accuracy") {
            r.best_val_accuracy = std::stod(value);
        } else if (key == "best_epoch") {
            r.best_epoch = std::stoi(value);
        }
    }
    if (!have_hash || !have_acc) return std::nullopt;
    return r;
}

void write_run_result(const std::filesystem::path& run_dir, const RunResult& r)
{
    std::filesystem::create_directories(run_dir);
    const auto tmp = run_dir / "result.txt.tmp";
    {
        std::ofstream out(tmp);
        out << std::setprecision(17) << "config_hash = " << hex64(r.config_hash) << "\ntest_accuracy = " << r.test_accuracy
            << "\nbest_val_accuracy = " << r.best_val_accuracy << "\nbest_epoch = " << r.best_epoch << '\n';
    }
    std::filesystem::rename(tmp, run_dir / "result.txt");
}

std::filesystem::path run_directory(const ExperimentConfig& cfg, AblationMode mode, std::uint64_t seed)
{
    return cfg.run_dir / (mode_name(mode) + "_seed" + std::to_string(seed));
}

ExperimentConfig run_config(const ExperimentConfig& cfg, AblationMode mode, std::uint64_t seed)
{
    ExperimentConfig c = cfg;
    c.distill.mode = mode;
    c.distill.seed = seed;
    return c;
}

bool ordering_holds(const AblationRow& a, const AblationRow& b)
{
    if (a.accuracies.empty() || b.accuracies.empty()) return false;
    return a.mean - b.mean >= 0.01 || a.mean - a.stdev > b.mean + b.stdev;
}

AblationTable run_ablation(const ExperimentConfig& cfg, const Datasets& data, std::span<const TeacherModel> teachers, int jobs,
                           std::ostream* log)
{
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    struct Cell {
        std::size_t row;
        std::uint64_t seed;
        std::optional<Scalar> accuracy;
        std::string error;
    };
    AblationTable table;
    std::vector<Cell> cells;
    for (AblationMode m : cfg.ablation_modes) {
        table.rows.push_back({m, {}, {}, {}, 0.0, 0.0});
        for (int i = 0; i < cfg.ablation_seeds; ++i) cells.push_back({table.rows.size() - 1, seed_of(cfg, i), std::nullopt, {}});
    }

    std::mutex log_mutex;
    auto say = [&](const std::string& line) {
        if (!log) return;
        std::lock_guard lock(log_mutex);
        *log << line << std::flush;
    };

    // Frozen teacher outputs are shared by every cell.
    const TeacherOutputs train_out = compute_teacher_outputs(teachers, data.train.clips, cfg.model.input_frames);
    const TeacherOutputs val_out = compute_teacher_outputs(teachers, data.val.clips, cfg.model.input_frames);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            Cell& cell = cells[i];
            const AblationMode mode = table.rows[cell.row].mode;
            const ExperimentConfig rc = run_config(cfg, mode, cell.seed);
            const auto dir = run_directory(cfg, mode, cell.seed);
            const std::string tag = mode_name(mode) + " seed " + std::to_string(cell.seed);
            if (auto done = read_run_result(dir); done && done->config_hash == rc.hash()) {
                cell.accuracy = done->test_accuracy;
                say(tag + ": reusing finished run (" + std::to_string(100.0 * done->test_accuracy) + "%)\n");
                continue;
            }
            try {
                std::ofstream run_log;
                std::filesystem::create_directories(dir);
                run_log.open(dir / "train.log", std::ios::trunc);
                TrainResult tr = train(rc, data.train.clips, train_out, data.val.clips, val_out, teachers, dir, &run_log);
                const EvalReport ev = evaluate(tr.student, data.test.clips, cfg.model.input_frames);
                write_run_result(dir, {rc.hash(), ev.accuracy, tr.best_val_accuracy, tr.best_epoch});
                cell.accuracy = ev.accuracy;
                std::ostringstream os;
                os << tag << ": test accuracy " << std::fixed << std::setprecision(2) << 100.0 * ev.accuracy << "% (best epoch "
                   << tr.best_epoch << ", " << std::setprecision(0) << tr.seconds << " s)\n";
                say(os.str());
            } catch (const std::exception& e) {
                cell.error = tag + ": " + e.what();
                say("FAILED " + cell.error + "\n");
            }
        }
    };
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const auto n_jobs = static_cast<std::size_t>(jobs > 0 ? static_cast<unsigned>(jobs) : hw);
    {
        std::vector<std::jthread> pool;
        for (std::size_t j = 1; j < std::min(n_jobs, cells.size()); ++j) pool.emplace_back(worker);
        worker();
    }

    for (const Cell& c : cells) {
        AblationRow& row = table.rows[c.row];
        if (c.accuracy) {
            row.seeds.push_back(c.seed);
            row.accuracies.push_back(*c.accuracy);
        } else {
            row.errors.push_back(c.error);
        }
    }
    for (auto& row : table.rows) finish_row(row);
    table.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::filesystem::create_directories(cfg.run_dir);
    std::ofstream(cfg.run_dir / "ablation.csv") << table.to_csv();
    return table;
}

AblationTable collect_ablation(const ExperimentConfig& cfg)
{
    AblationTable table;
    for (AblationMode m : cfg.ablation_modes) {
        AblationRow row{m, {}, {}, {}, 0.0, 0.0};
        for (int i = 0; i < cfg.ablation_seeds; ++i) {
            const auto seed = seed_of(cfg, i);
            const auto r = read_run_result(run_directory(cfg, m, seed));
            if (r && r->config_hash == run_config(cfg, m, seed).hash()) {
                row.seeds.push_back(seed);
                row.accuracies.push_back(r->test_accuracy);
            } else {
                row.errors.push_back(mode_name(m) + " seed " + std::to_string(seed) + ": no finished run");
            }
        }
        finish_row(row);
        table.rows.push_back(std::move(row));
    }
    return table;
}

} // namespace gkd
