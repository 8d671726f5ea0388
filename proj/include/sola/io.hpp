#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sola/drift.hpp"
#include "sola/evalkit.hpp"
#include "sola/run_config.hpp"

namespace sola {

// All files are UTF-8 JSON / JSON-lines / CSV. Doubles are printed in
// shortest round-trip form, so every save/load cycle is bit-exact and
// identical state always serializes to identical bytes.

namespace paths {
inline std::filesystem::path config(const std::filesystem::path& dir) { return dir / "config.json"; }
inline std::filesystem::path base_train(const std::filesystem::path& dir) { return dir / "base_train.jsonl"; }
inline std::filesystem::path base_test(const std::filesystem::path& dir) { return dir / "base_test.jsonl"; }
inline std::filesystem::path holdout(const std::filesystem::path& dir) { return dir / "holdout.jsonl"; }
inline std::filesystem::path edit_stream(const std::filesystem::path& dir) { return dir / "edit_stream.jsonl"; }
inline std::filesystem::path base_model(const std::filesystem::path& dir) { return dir / "base_model.json"; }
inline std::filesystem::path train_report(const std::filesystem::path& dir) { return dir / "train_report.json"; }
inline std::filesystem::path pool(const std::filesystem::path& dir) { return dir / "pool.json"; }
inline std::filesystem::path memory(const std::filesystem::path& dir) { return dir / "memory.json"; }
inline std::filesystem::path edit_records(const std::filesystem::path& dir) { return dir / "edit_records.jsonl"; }
inline std::filesystem::path timings(const std::filesystem::path& dir) { return dir / "timings.csv"; }
inline std::filesystem::path metrics(const std::filesystem::path& dir) { return dir / "metrics.json"; }
inline std::filesystem::path metrics_csv(const std::filesystem::path& dir) { return dir / "metrics.csv"; }
inline std::filesystem::path rollback_log(const std::filesystem::path& dir) { return dir / "rollback_log.json"; }
inline std::filesystem::path drift_csv(const std::filesystem::path& dir) { return dir / "drift.csv"; }
inline std::filesystem::path ablate_rank_csv(const std::filesystem::path& dir) { return dir / "ablate_rank.csv"; }
inline std::filesystem::path ablate_layers_csv(const std::filesystem::path& dir) { return dir / "ablate_layers.csv"; }
inline std::filesystem::path keys_csv(const std::filesystem::path& dir) { return dir / "keys.csv"; }
}  // namespace paths

/// Shortest round-trip decimal form of a double (the same rendering the
/// JSON writer uses), for CSV cells.
std::string format_double(double v);

void save_run_config(const std::filesystem::path& file, const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& file);

void save_model(const std::filesystem::path& file, const BaseModel& model);
BaseModel load_model(const std::filesystem::path& file);

void save_pool(const std::filesystem::path& file, const LoraPool& pool,
               const ModelConfig& config);
LoraPool load_pool(const std::filesystem::path& file);

void save_memory(const std::filesystem::path& file, const KeyMemory& mem);
KeyMemory load_memory(const std::filesystem::path& file);

void save_labeled_seqs(const std::filesystem::path& file, const std::vector<LabeledSeq>& seqs);
std::vector<LabeledSeq> load_labeled_seqs(const std::filesystem::path& file);

void save_edit_stream(const std::filesystem::path& file, const std::vector<EditTask>& stream);
std::vector<EditTask> load_edit_stream(const std::filesystem::path& file);

/// Deterministic record fields only; wall times go to the timings CSV.
void save_edit_records(const std::filesystem::path& file, const std::vector<EditRecord>& records);
std::vector<EditRecord> load_edit_records(const std::filesystem::path& file);
void save_timings(const std::filesystem::path& file, const std::vector<EditRecord>& records);

void save_metrics(const std::filesystem::path& file, const MetricsReport& report);
MetricsReport load_metrics(const std::filesystem::path& file);
void save_metrics_csv(const std::filesystem::path& file, const MetricsReport& report);

void save_drift_csv(const std::filesystem::path& file, const std::vector<DriftRow>& rows);

struct AblationRow {
    std::string setting;  // rank value or layer window
    double es = 0.0;
    double err = 0.0;
    double trr = 0.0;
    double edit_time_min = 0.0;
};
void save_ablation_csv(const std::filesystem::path& file, const std::string& setting_column,
                       const std::vector<AblationRow>& rows);

/// Stored keys plus holdout queries, one vector per row, for external
/// projection/visualization tools.
void save_keys_csv(const std::filesystem::path& file, const KeyMemory& mem,
                   const std::vector<std::vector<double>>& holdout_queries);

/// Throws IoError naming the path when a required artifact is missing.
void require_artifact(const std::filesystem::path& file, const std::string& produced_by);

}  // namespace sola
