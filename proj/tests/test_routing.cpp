#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "sola/editor.hpp"
#include "sola/pipeline.hpp"
#include "sola/routing.hpp"

using namespace sola;

namespace {

std::vector<double> random_vec(SeededRng& rng, int dim) {
    std::vector<double> v(dim);
    for (double& x : v) {
        x = rng.next_uniform() * 2.0 - 1.0;
    }
    return v;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab = 12;
    c.seq_len = 4;
    c.d_model = 8;
    c.n_blocks = 2;
    c.ffn_hidden = 12;
    c.n_classes = 4;
    c.edited_layers = {0, 1};
    c.seed = 5;
    return c;
}

std::vector<int> tokens_for(const ModelConfig& c, uint64_t seed) {
    SeededRng rng(seed);
    std::vector<int> t(c.seq_len);
    for (int& x : t) {
        x = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(c.vocab));
    }
    return t;
}

// Tiny edited model used by the rollback / decision tests.
struct MiniWorld {
    BaseModel model;
    LoraPool pool;
    KeyMemory mem;
    std::vector<EditRecord> records;
    std::vector<EditTask> stream;
};

MiniWorld make_world(int n_edits) {
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    MiniWorld w{build_base(cfg, rng), {}, {}, {}, {}};
    w.mem.alpha = 0.01;
    for (int e = 0; e < n_edits; ++e) {
        EditTask task;
        task.edit_id = e;
        const std::vector<int> toks = tokens_for(cfg, 1000 + e);
        const int base_pred = forward(w.model, toks).predicted_class();
        task.instances.push_back(LabeledSeq{toks, (base_pred + 1) % cfg.n_classes});
        SeededRng erng(derive_seed(cfg.seed, kEditRngTag + e));
        TrainRecipe recipe;
        recipe.rank = 2;
        w.records.push_back(apply_edit(w.model, w.pool, w.mem, task, recipe, erng));
        w.stream.push_back(std::move(task));
    }
    return w;
}

}  // namespace

TEST_CASE("write_key: per-instance entries, duplicates retained, zero-norm rejected") {
    KeyMemory mem;
    const std::vector<double> q = {1.0, 2.0, 2.0};
    write_key(mem, q, 0, 0, 0);
    write_key(mem, q, 0, 0, 1);
    write_key(mem, q, 0, 0, 2);
    CHECK(mem.entries.size() == 3);
    CHECK(mem.entries[0].key == mem.entries[1].key);
    for (const KeyEntry& e : mem.entries) {
        CHECK(e.lora_id == 0);
        // Stored normalized: |q| = 3.
        CHECK(e.key[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    CHECK_THROWS_AS(write_key(mem, {0.0, 0.0, 0.0}, 1, 1, 0), NumericError);
}

TEST_CASE("memory grows by one entry per single-instance edit") {
    const MiniWorld w = make_world(5);
    CHECK(w.mem.entries.size() == 5);
    CHECK(w.pool.modules.size() == 5);
}

TEST_CASE("nearest_key: exact match at distance 0, orthogonal at distance 1") {
    KeyMemory mem;
    write_key(mem, {1.0, 0.0}, 0, 0, 0);
    const auto hit = nearest_key(mem, {2.0, 0.0});
    REQUIRE(hit.has_value());
    CHECK(hit->distance == 0.0);
    CHECK(hit->entry->lora_id == 0);

    const auto miss = nearest_key(mem, {0.0, 5.0});
    REQUIRE(miss.has_value());
    CHECK(miss->distance == doctest::Approx(1.0).epsilon(1e-15));

    KeyMemory empty;
    CHECK_FALSE(nearest_key(empty, {1.0, 0.0}).has_value());
}

TEST_CASE("nearest_key matches an exhaustive brute-force oracle") {
    SeededRng rng(77);
    KeyMemory mem;
    const int dim = 16;
    for (int i = 0; i < 100; ++i) {
        write_key(mem, random_vec(rng, dim), i % 7, i / 3, i % 3);
    }
    for (int trial = 0; trial < 100; ++trial) {
        const std::vector<double> q = random_vec(rng, dim);
        const auto got = nearest_key(mem, q);
        REQUIRE(got.has_value());

        // Independent linear scan with the same tie rule.
        const std::vector<double> qn = l2_normalize(q);
        const KeyEntry* best = nullptr;
        double best_d = 0.0;
        for (const KeyEntry& e : mem.entries) {
            double dot = 0.0;
            for (int j = 0; j < dim; ++j) {
                dot += qn[j] * e.key[j];
            }
            const double d = 1.0 - dot;
            if (best == nullptr || d < best_d ||
                (d == best_d && std::pair(e.edit_id, e.instance_id) <
                                    std::pair(best->edit_id, best->instance_id))) {
                best = &e;
                best_d = d;
            }
        }
        CHECK(got->entry == best);
        CHECK(got->distance == best_d);
    }
}

TEST_CASE("nearest_key: exact ties break to the lowest (edit_id, instance_id)") {
    KeyMemory mem;
    write_key(mem, {1.0, 0.0}, 3, 5, 1);
    write_key(mem, {1.0, 0.0}, 1, 2, 0);
    write_key(mem, {1.0, 0.0}, 2, 2, 1);
    const auto hit = nearest_key(mem, {1.0, 0.0});
    REQUIRE(hit.has_value());
    CHECK(hit->entry->edit_id == 2);
    CHECK(hit->entry->instance_id == 0);
}

TEST_CASE("master_decide: threshold boundary follows the base branch") {
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    const BaseModel model = build_base(cfg, rng);
    const std::vector<int> toks = tokens_for(cfg, 1);
    ForwardTrace trace = forward(model, toks);

    KeyMemory mem;
    mem.alpha = 0.01;

    // Empty memory: BaseOnly at infinite distance.
    Decision dec = master_decide(mem, trace);
    CHECK(dec.kind == Decision::Kind::BaseOnly);
    CHECK(std::isinf(dec.distance));

    // Construct keys at controlled distances from the trace query.
    const std::vector<double> q = l2_normalize(trace.query_vector);
    auto key_at_distance = [&q](double d) {
        // Rotate q toward an orthogonal direction by angle acos(1-d).
        std::vector<double> ortho(q.size(), 0.0);
        ortho[0] = -q[1];
        ortho[1] = q[0];
        const double n = std::sqrt(ortho[0] * ortho[0] + ortho[1] * ortho[1]);
        for (double& x : ortho) {
            x /= n;
        }
        const double theta = std::acos(1.0 - d);
        std::vector<double> k(q.size());
        for (size_t i = 0; i < q.size(); ++i) {
            k[i] = std::cos(theta) * q[i] + std::sin(theta) * ortho[i];
        }
        return k;
    };

    write_key(mem, key_at_distance(0.009), 0, 0, 0);
    dec = master_decide(mem, trace);
    CHECK(dec.kind == Decision::Kind::Adapted);
    CHECK(dec.distance < 0.01);

    mem.entries.clear();
    write_key(mem, key_at_distance(0.02), 0, 0, 0);
    dec = master_decide(mem, trace);
    CHECK(dec.kind == Decision::Kind::BaseOnly);

    // d == alpha exactly, constructed with exactly representable values:
    // alpha = 0.25, query (1, 0, ...), stored key (0.75, 0, ...). The dot is
    // exactly 0.75, so d = 0.25 == alpha and the base branch must win.
    KeyMemory boundary;
    boundary.alpha = 0.25;
    KeyEntry e;
    e.key.assign(trace.query_vector.size(), 0.0);
    e.key[0] = 0.75;
    e.lora_id = 0;
    e.edit_id = 0;
    e.instance_id = 0;
    boundary.entries.push_back(e);
    ForwardTrace unit_trace;
    unit_trace.query_vector.assign(trace.query_vector.size(), 0.0);
    unit_trace.query_vector[0] = 1.0;
    dec = master_decide(boundary, unit_trace);
    CHECK(dec.distance == 0.25);
    CHECK(dec.kind == Decision::Kind::BaseOnly);
}

TEST_CASE("empty memory routes every input to the base path bit-exactly") {
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    const BaseModel model = build_base(cfg, rng);
    LoraPool pool;
    KeyMemory mem;
    for (uint64_t s = 0; s < 10; ++s) {
        const std::vector<int> toks = tokens_for(cfg, s);
        const RoutedResult routed = route_forward(model, pool, mem, toks);
        CHECK(routed.decision.kind == Decision::Kind::BaseOnly);
        CHECK(bits_equal(routed.trace.logits, forward(model, toks).logits));
    }
}

TEST_CASE("rollback removes exactly the edit's entries and is idempotent") {
    KeyMemory mem;
    write_key(mem, {1.0, 0.0}, 0, 0, 0);
    write_key(mem, {0.5, 1.0}, 0, 0, 1);
    write_key(mem, {0.0, 1.0}, 0, 0, 2);
    write_key(mem, {1.0, 1.0}, 1, 1, 0);
    CHECK(rollback(mem, 0) == 3);
    CHECK(mem.entries.size() == 1);
    CHECK(mem.entries[0].edit_id == 1);
    CHECK(rollback(mem, 0) == 0);
    CHECK(rollback(mem, 99) == 0);
}

TEST_CASE("rollback restores base behavior for exactly the rolled-back edit") {
    MiniWorld w = make_world(4);

    // All edits route to their own modules beforehand.
    for (const EditTask& task : w.stream) {
        const RoutedResult routed = route_forward(w.model, w.pool, w.mem, task.instances[0].tokens);
        CHECK(routed.decision.adapted());
        CHECK(*routed.decision.lora_id == w.records[task.edit_id].lora_id);
    }

    // Snapshot decisions and logits of the edits that will remain.
    std::vector<Decision> before_dec;
    std::vector<std::vector<double>> before_logits;
    for (int e = 1; e < 4; ++e) {
        const RoutedResult r = route_forward(w.model, w.pool, w.mem, w.stream[e].instances[0].tokens);
        before_dec.push_back(r.decision);
        before_logits.push_back(r.trace.logits);
    }

    const int removed = rollback(w.mem, 0);
    CHECK(removed == 1);

    // The rolled-back edit reverts to base bit-exactly; its module remains
    // in the pool but is unreachable.
    const std::vector<int>& toks0 = w.stream[0].instances[0].tokens;
    const RoutedResult after0 = route_forward(w.model, w.pool, w.mem, toks0);
    CHECK(after0.decision.kind == Decision::Kind::BaseOnly);
    CHECK(bits_equal(after0.trace.logits, forward(w.model, toks0).logits));
    CHECK(w.pool.modules.size() == 4);

    // Other edits: identical decisions and logits.
    for (int e = 1; e < 4; ++e) {
        const RoutedResult r = route_forward(w.model, w.pool, w.mem, w.stream[e].instances[0].tokens);
        CHECK(r.decision == before_dec[e - 1]);
        CHECK(bits_equal(r.trace.logits, before_logits[e - 1]));
    }
}

TEST_CASE("mismatch_count: exact keys give zero, perturbations beyond alpha count") {
    MiniWorld w = make_world(3);
    std::vector<int> assignments;
    std::vector<std::vector<double>> queries;
    for (const EditTask& task : w.stream) {
        assignments.push_back(w.records[task.edit_id].lora_id);
        queries.push_back(forward(w.model, task.instances[0].tokens).query_vector);
    }
    CHECK(mismatch_count(w.mem, assignments, queries) == 0);

    // Push one query far away: BaseOnly != assigned counts as a mismatch.
    std::vector<double> far(queries[0].size(), 0.0);
    far[0] = -queries[0][0];
    far[1] = queries[0][0];
    queries[0] = far;
    CHECK(mismatch_count(w.mem, assignments, queries) >= 1);

    CHECK_THROWS_AS(mismatch_count(w.mem, {0}, queries), ShapeError);
}

TEST_CASE("keys written during an edit never change afterwards") {
    MiniWorld w = make_world(1);
    const std::vector<KeyEntry> snapshot = w.mem.entries;

    for (int e = 1; e < 6; ++e) {
        EditTask task;
        task.edit_id = e;
        const std::vector<int> toks = tokens_for(w.model.config, 2000 + e);
        task.instances.push_back(
            LabeledSeq{toks, forward(w.model, toks).predicted_class() == 0 ? 1 : 0});
        SeededRng erng(derive_seed(w.model.config.seed, kEditRngTag + e));
        TrainRecipe recipe;
        recipe.rank = 2;
        apply_edit(w.model, w.pool, w.mem, task, recipe, erng);
    }
    for (size_t i = 0; i < snapshot.size(); ++i) {
        CHECK(bits_equal(snapshot[i].key, w.mem.entries[i].key));
        CHECK(snapshot[i].lora_id == w.mem.entries[i].lora_id);
    }
}

TEST_CASE("euclidean metric option routes exact matches and rejects distant queries") {
    KeyMemory mem;
    mem.metric = DistanceMetric::Euclidean;
    mem.alpha = 0.01;
    write_key(mem, {3.0, 4.0}, 0, 0, 0);
    const auto hit = nearest_key(mem, {3.0, 4.0});
    REQUIRE(hit.has_value());
    CHECK(hit->distance == 0.0);
    const auto far = nearest_key(mem, {-4.0, 3.0});
    CHECK(far->distance == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}
