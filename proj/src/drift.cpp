#include "sola/drift.hpp"

#include <string>

namespace sola {

namespace {

struct NearestCenter {
    int index = -1;
    double distance = 0.0;
};

NearestCenter nearest_center(const ClusterRouter& router, const std::vector<double>& q_norm) {
    NearestCenter best;
    for (size_t i = 0; i < router.centers.size(); ++i) {
        const double d =
            key_distance(router.metric, q_norm, l2_normalize(router.centers[i].center));
        if (best.index < 0 || d < best.distance) {
            best.index = static_cast<int>(i);
            best.distance = d;
        }
    }
    return best;
}

}  // namespace

ClusterAssignment cluster_assign(ClusterRouter& router, const std::vector<double>& query,
                                 int next_lora_id) {
    const std::vector<double> q = l2_normalize(query);
    const NearestCenter near = nearest_center(router, q);
    if (near.index >= 0 && near.distance < router.radius) {
        ClusterCenter& c = router.centers[near.index];
        const double m = static_cast<double>(c.member_count);
        for (size_t j = 0; j < c.center.size(); ++j) {
            c.center[j] = (c.center[j] * m + q[j]) / (m + 1.0);
        }
        ++c.member_count;
        ++router.update_count;  // fixed-point moves count as updates too
        return ClusterAssignment{c.lora_id, false};
    }
    router.centers.push_back(ClusterCenter{q, next_lora_id, 1});
    return ClusterAssignment{next_lora_id, true};
}

Decision cluster_decide(const ClusterRouter& router, const std::vector<double>& query) {
    Decision dec;
    if (router.centers.empty()) {
        return dec;
    }
    const NearestCenter near = nearest_center(router, l2_normalize(query));
    dec.distance = near.distance;
    if (near.distance < router.radius) {
        dec.kind = Decision::Kind::Adapted;
        dec.lora_id = router.centers[near.index].lora_id;
    }
    return dec;
}

std::vector<DriftRow> drift_experiment(const BaseModel& model, const Benchmark& bench,
                                       const std::vector<double>& radius_grid,
                                       const TrainRecipe& recipe, uint64_t seed) {
    if (bench.edit_stream.empty()) {
        throw ParamError("drift_experiment: empty edit stream");
    }
    std::vector<DriftRow> rows;
    for (double radius : radius_grid) {
        if (!(radius > 0.0)) {
            throw ParamError("cluster radius must be > 0, got " + std::to_string(radius));
        }
        ClusterRouter router;
        router.radius = radius;

        std::vector<LoraModule> modules;  // baseline's own mutable store
        std::vector<int> assignments;
        std::vector<const LabeledSeq*> instances;

        for (const EditTask& task : bench.edit_stream) {
            const std::vector<double> q = query_of(model, task.instances[0].tokens);
            ClusterAssignment assigned =
                cluster_assign(router, q, static_cast<int>(modules.size()));
            if (assigned.is_new_center) {
                // Same per-edit init stream as the frozen-key editor, so a
                // radius below every pairwise distance reproduces it exactly.
                SeededRng rng(derive_seed(seed, kEditRngTag + task.edit_id));
                LoraModule mod;
                mod.lora_id = assigned.lora_id;
                for (size_t i = 0; i < model.config.edited_layers.size(); ++i) {
                    LoraFactors f;
                    f.rank = recipe.rank;
                    f.a = gaussian_init(rng, recipe.rank, model.config.ffn_hidden,
                                        recipe.init_std);
                    f.b = Mat::zeros(model.config.d_model, recipe.rank);
                    mod.per_layer.push_back(std::move(f));
                }
                modules.push_back(std::move(mod));
            }
            // The absorbing cluster's shared module relearns just this task.
            train_module_on_task(model, modules[assigned.lora_id], task, recipe);
            for (const LabeledSeq& inst : task.instances) {
                assignments.push_back(assigned.lora_id);
                instances.push_back(&inst);
            }
        }

        DriftRow row;
        row.radius = radius;
        row.updates = router.update_count;

        int err_hits = 0;
        for (size_t i = 0; i < instances.size(); ++i) {
            const Decision dec = cluster_decide(router, query_of(model, instances[i]->tokens));
            const int retrieved = dec.adapted() ? *dec.lora_id : -1;
            if (retrieved != assignments[i]) {
                ++row.mismatches;
            }
            const LoraModule* active = dec.adapted() ? &modules[*dec.lora_id] : nullptr;
            if (forward(model, instances[i]->tokens, active).predicted_class() ==
                instances[i]->label) {
                ++err_hits;
            }
        }
        row.err = static_cast<double>(err_hits) / static_cast<double>(instances.size());

        int trr_hits = 0;
        for (const LabeledSeq& h : bench.upstream_holdout) {
            const Decision dec = cluster_decide(router, query_of(model, h.tokens));
            const LoraModule* active = dec.adapted() ? &modules[*dec.lora_id] : nullptr;
            if (forward(model, h.tokens, active).predicted_class() == h.label) {
                ++trr_hits;
            }
        }
        row.trr = bench.upstream_holdout.empty()
                      ? 0.0
                      : static_cast<double>(trr_hits) /
                            static_cast<double>(bench.upstream_holdout.size());
        rows.push_back(row);
    }
    return rows;
}

}  // namespace sola
