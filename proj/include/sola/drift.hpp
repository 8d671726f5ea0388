#pragma once

#include <vector>

#include "sola/evalkit.hpp"

namespace sola {

/// Online clustering router whose centers move during editing: the drifting
/// counterpart to the frozen key memory.
struct ClusterCenter {
    std::vector<double> center;  // running mean of absorbed (normalized) queries
    int lora_id = -1;
    int member_count = 0;
};

struct ClusterRouter {
    std::vector<ClusterCenter> centers;
    double radius = 0.0;
    DistanceMetric metric = DistanceMetric::Cosine;
    int update_count = 0;  // counts every absorbing assignment, fixed points included
};

struct ClusterAssignment {
    int lora_id = -1;
    bool is_new_center = false;
};

/// Nearest center within radius absorbs the query (center moves to the new
/// running mean, update_count bumps); otherwise a fresh center/lora id is
/// created. The query is normalized exactly like a routing key.
ClusterAssignment cluster_assign(ClusterRouter& router, const std::vector<double>& query,
                                 int next_lora_id);

/// Inference-side lookup: nearest center strictly within radius, else base.
Decision cluster_decide(const ClusterRouter& router, const std::vector<double>& query);

struct DriftRow {
    double radius = 0.0;
    int updates = 0;
    int mismatches = 0;
    double err = 0.0;
    double trr = 0.0;
};

/// Replays the edit stream once per radius with cluster routing substituted
/// for the key memory. A cluster that absorbs a new edit has its shared
/// module retrained on that edit alone, which is what makes old edits decay.
std::vector<DriftRow> drift_experiment(const BaseModel& model, const Benchmark& bench,
                                       const std::vector<double>& radius_grid,
                                       const TrainRecipe& recipe, uint64_t seed);

}  // namespace sola
