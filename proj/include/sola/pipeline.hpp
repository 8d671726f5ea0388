#pragma once

#include <filesystem>
#include <vector>

#include "sola/io.hpp"

namespace sola {

struct StreamRunResult {
    LoraPool pool;
    KeyMemory mem;
    std::vector<EditRecord> records;
    double edit_seconds = 0.0;
};

/// Applies the edit stream strictly in file order. Edit i trains with the
/// RNG stream derive_seed(seed, kEditRngTag + i).
StreamRunResult apply_stream(const BaseModel& model, const std::vector<EditTask>& stream,
                             const TrainRecipe& recipe, double alpha, DistanceMetric metric,
                             uint64_t seed);

// Stage drivers. Each validates its upstream artifacts, writes the resolved
// config beside its outputs, and writes only deterministic bytes (wall-clock
// times go to the timings CSV).

void run_gen(const RunConfig& cfg, const std::filesystem::path& out);

struct TrainBaseOutcome {
    double train_accuracy = 0.0;
    double final_loss = 0.0;
    int holdout_resampled = 0;
    int test_items_skipped = 0;
};
/// Trains the base on base_train, then finalizes the benchmark against the
/// trained model: edit stream relabeling and holdout/key separation both
/// need base predictions, so they happen here rather than in `gen`.
TrainBaseOutcome run_train_base(const RunConfig& cfg, const std::filesystem::path& out);

void run_edit(const RunConfig& cfg, const std::filesystem::path& out);

MetricsReport run_eval(const RunConfig& cfg, const std::filesystem::path& out);

/// Deletes the keys of the listed edits from memory.json; returns the total
/// number of removed entries.
int run_rollback(const RunConfig& cfg, const std::filesystem::path& out,
                 const std::vector<int>& edit_ids);

std::vector<DriftRow> run_drift(const RunConfig& cfg, const std::filesystem::path& out,
                                const std::vector<double>& radius_grid);

std::vector<AblationRow> run_ablate_rank(const RunConfig& cfg, const std::filesystem::path& out,
                                         const std::vector<int>& ranks);

std::vector<AblationRow> run_ablate_layers(const RunConfig& cfg,
                                           const std::filesystem::path& out,
                                           const std::vector<std::vector<int>>& windows);

void run_dump_keys(const RunConfig& cfg, const std::filesystem::path& out);

/// gen -> train-base -> edit -> eval in one call.
MetricsReport run_full_pipeline(const RunConfig& cfg, const std::filesystem::path& out);

// Default sweep grids.
std::vector<int> default_ablation_ranks();                  // {1, 2, 3, 4, 5, 10}
std::vector<std::vector<int>> default_layer_windows(int n_blocks);  // contiguous pairs

}  // namespace sola
