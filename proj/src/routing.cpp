#include "sola/routing.hpp"

#include <algorithm>
#include <cmath>

namespace sola {

std::string metric_name(DistanceMetric m) {
    return m == DistanceMetric::Cosine ? "cosine" : "euclidean";
}

DistanceMetric metric_from_name(const std::string& name) {
    if (name == "cosine") {
        return DistanceMetric::Cosine;
    }
    if (name == "euclidean") {
        return DistanceMetric::Euclidean;
    }
    throw ParamError("unknown distance metric '" + name + "'");
}

std::vector<double> l2_normalize(const std::vector<double>& v) {
    double norm_sq = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError("non-finite component in key/query vector");
        }
        norm_sq += x * x;
    }
    if (norm_sq == 0.0) {
        throw NumericError("cannot normalize zero-norm vector");
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        out[i] = v[i] * inv;
    }
    return out;
}

double key_distance(DistanceMetric metric, const std::vector<double>& a,
                    const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ShapeError("key dimension mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    if (metric == DistanceMetric::Cosine) {
        double dot = 0.0;
        for (size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
        }
        return 1.0 - dot;
    }
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

void write_key(KeyMemory& mem, const std::vector<double>& query, int lora_id, int edit_id,
               int instance_id) {
    KeyEntry e;
    e.key = l2_normalize(query);
    e.lora_id = lora_id;
    e.edit_id = edit_id;
    e.instance_id = instance_id;
    mem.entries.push_back(std::move(e));
}

std::optional<NearestResult> nearest_key(const KeyMemory& mem, const std::vector<double>& query) {
    if (mem.entries.empty()) {
        return std::nullopt;
    }
    const std::vector<double> q = l2_normalize(query);
    const KeyEntry* best = nullptr;
    double best_d = 0.0;
    for (const KeyEntry& e : mem.entries) {
        const double d = key_distance(mem.metric, q, e.key);
        if (best == nullptr || d < best_d ||
            (d == best_d && std::pair(e.edit_id, e.instance_id) <
                                std::pair(best->edit_id, best->instance_id))) {
            best = &e;
            best_d = d;
        }
    }
    return NearestResult{best, best_d};
}

Decision master_decide(const KeyMemory& mem, const ForwardTrace& trace) {
    if (trace.query_vector.empty()) {
        throw StateError("trace carries no query vector");
    }
    Decision dec;
    auto nearest = nearest_key(mem, trace.query_vector);
    if (!nearest.has_value()) {
        return dec;  // empty memory: BaseOnly at infinite distance
    }
    dec.distance = nearest->distance;
    if (nearest->distance < mem.alpha) {
        dec.kind = Decision::Kind::Adapted;
        dec.lora_id = nearest->entry->lora_id;
        dec.matched_entry = std::pair(nearest->entry->edit_id, nearest->entry->instance_id);
    }
    return dec;
}

int rollback(KeyMemory& mem, int edit_id) {
    const auto removed = std::erase_if(
        mem.entries, [edit_id](const KeyEntry& e) { return e.edit_id == edit_id; });
    return static_cast<int>(removed);
}

int mismatch_count(const KeyMemory& mem, const std::vector<int>& assignments,
                   const std::vector<std::vector<double>>& queries) {
    if (assignments.size() != queries.size()) {
        throw ShapeError("assignments/queries length mismatch: " +
                         std::to_string(assignments.size()) + " vs " +
                         std::to_string(queries.size()));
    }
    int mismatches = 0;
    for (size_t i = 0; i < queries.size(); ++i) {
        auto nearest = nearest_key(mem, queries[i]);
        const bool adapted = nearest.has_value() && nearest->distance < mem.alpha;
        const int retrieved = adapted ? nearest->entry->lora_id : -1;
        if (retrieved != assignments[i]) {
            ++mismatches;
        }
    }
    return mismatches;
}

RoutedResult route_forward(const BaseModel& model, const LoraPool& pool, const KeyMemory& mem,
                           const std::vector<int>& tokens) {
    ForwardTrace base_trace = forward(model, tokens);
    Decision dec = master_decide(mem, base_trace);
    if (!dec.adapted()) {
        base_trace.decision = dec;
        return RoutedResult{std::move(base_trace), dec};
    }
    ForwardTrace adapted = forward(model, tokens, &pool.module(*dec.lora_id));
    adapted.decision = dec;
    return RoutedResult{std::move(adapted), dec};
}

}  // namespace sola
