#pragma once

#include <cstdint>
#include <vector>

#include "sola/editor.hpp"
#include "sola/model.hpp"
#include "sola/routing.hpp"

namespace sola {

struct BenchmarkParams {
    int n_edits = 100;
    int instances_per_edit = 1;
    int holdout_size = 500;
    int base_train_size = 4096;
    int base_test_size = 1024;
};

/// Synthetic classification benchmark. The base task labels a uniform random
/// token sequence with (sum of ids) mod n_classes. Edits relabel base_test
/// inputs to (old label + 1) mod n_classes, keeping only inputs where that
/// target differs from the trained base model's prediction.
struct Benchmark {
    std::vector<LabeledSeq> base_train;
    std::vector<LabeledSeq> base_test;
    std::vector<EditTask> edit_stream;
    std::vector<LabeledSeq> upstream_holdout;
    uint64_t seed = 0;
};

struct MetricsReport {
    double es_rate = 1.0;
    double err = 1.0;
    bool err_on_empty = false;  // set when no edits were applied
    double trr = 0.0;
    double trr_base = 0.0;
    bool holdout_bit_identical = false;
    int mismatches = 0;
    long trainable_params_per_edit = 0;
    long total_memory_entries = 0;
    int edits_applied = 0;
    int edited_instances = 0;
    int edited_correct = 0;
    int edited_restored_to_base = 0;  // routed logits bitwise equal to base
    double rephrase_route_rate = 0.0;
};

/// Model-independent part: train/test/holdout splits, deterministic per
/// seed. Sequences are distinct within base_test and the holdout is disjoint
/// from base_test (hence from every edit input).
Benchmark gen_splits(uint64_t seed, const BenchmarkParams& params, const ModelConfig& config);

struct FinalizeReport {
    int holdout_resampled = 0;
    int test_items_skipped = 0;  // relabel target collided with base prediction
};

/// Model-dependent part: builds the edit stream against the trained base and
/// re-draws any holdout item whose query would land within alpha of an edit
/// key (so retention checks can demand bit-equality). Deterministic.
FinalizeReport finalize_benchmark(Benchmark& bench, const BaseModel& model,
                                  const BenchmarkParams& params, double alpha,
                                  DistanceMetric metric);

/// gen_splits + finalize_benchmark in one call.
Benchmark gen_benchmark(uint64_t seed, const BenchmarkParams& params, const BaseModel& model,
                        double alpha, DistanceMetric metric);

/// Stream-end metrics over the applied edit stream. ES comes from the edit
/// records; ERR/TRR are recomputed by routed inference here.
MetricsReport compute_metrics(const BaseModel& model, const LoraPool& pool, const KeyMemory& mem,
                              const Benchmark& bench, const std::vector<EditRecord>& records);

/// The adapter-independent routing query of an input under this model.
std::vector<double> query_of(const BaseModel& model, const std::vector<int>& tokens);

}  // namespace sola
