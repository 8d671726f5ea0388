#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sola/adapters.hpp"
#include "sola/decision.hpp"
#include "sola/model.hpp"

namespace sola {

enum class DistanceMetric { Cosine, Euclidean };

std::string metric_name(DistanceMetric m);
DistanceMetric metric_from_name(const std::string& name);

struct KeyEntry {
    std::vector<double> key;  // stored L2-normalized
    int lora_id = -1;
    int edit_id = -1;
    int instance_id = -1;
};

/// Ordered table of semantic keys. Entries are only appended (during edits)
/// or deleted (by rollback); an entry written once never changes.
struct KeyMemory {
    std::vector<KeyEntry> entries;
    double alpha = 0.01;
    DistanceMetric metric = DistanceMetric::Cosine;
};

/// Appends normalize(q) with its routing ids. Rejects zero-norm queries.
/// Callers only invoke this while an edit is in progress.
void write_key(KeyMemory& mem, const std::vector<double>& query, int lora_id, int edit_id,
               int instance_id);

struct NearestResult {
    const KeyEntry* entry = nullptr;
    double distance = 0.0;
};

/// Exhaustive scan for the entry minimizing dist(q, k); ties go to the
/// lowest (edit_id, instance_id). Returns nullopt on an empty memory.
std::optional<NearestResult> nearest_key(const KeyMemory& mem, const std::vector<double>& query);

/// The master-layer rule: Adapted iff nearest distance < alpha, BaseOnly on
/// d >= alpha or an empty memory. The decision is made once per pass.
Decision master_decide(const KeyMemory& mem, const ForwardTrace& trace);

/// Removes every entry of the edit. Idempotent; other edits untouched. The
/// module stays in the pool but becomes unreachable.
int rollback(KeyMemory& mem, int edit_id);

/// Queries whose retrieved lora_id differs from the recorded assignment
/// (BaseOnly counts as a mismatch when a module was assigned).
int mismatch_count(const KeyMemory& mem, const std::vector<int>& assignments,
                   const std::vector<std::vector<double>>& queries);

struct RoutedResult {
    ForwardTrace trace;
    Decision decision;
};

/// Inference entry point: base pass to read the query, one decision at the
/// master layer, and (when Adapted) a pass with the retrieved module active
/// at every edited layer. On BaseOnly the base trace is returned untouched,
/// so unmatched inputs reproduce the base model bit for bit.
RoutedResult route_forward(const BaseModel& model, const LoraPool& pool, const KeyMemory& mem,
                           const std::vector<int>& tokens);

double key_distance(DistanceMetric metric, const std::vector<double>& a,
                    const std::vector<double>& b);

std::vector<double> l2_normalize(const std::vector<double>& v);

}  // namespace sola
