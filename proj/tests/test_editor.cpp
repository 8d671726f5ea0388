#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "sola/editor.hpp"
#include "sola/pipeline.hpp"

using namespace sola;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab = 12;
    c.seq_len = 4;
    c.d_model = 8;
    c.n_blocks = 2;
    c.ffn_hidden = 12;
    c.n_classes = 4;
    c.edited_layers = {0, 1};
    c.seed = 21;
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

EditTask task_for(const BaseModel& model, int edit_id, uint64_t seed) {
    EditTask task;
    task.edit_id = edit_id;
    const std::vector<int> toks = tokens_for(model.config, seed);
    const int pred = forward(model, toks).predicted_class();
    task.instances.push_back(LabeledSeq{toks, (pred + 1) % model.config.n_classes});
    return task;
}

}  // namespace

TEST_CASE("cosine_lr: endpoints and midpoint") {
    CHECK(cosine_lr(0, 40, 0.05) == 0.05);
    CHECK(cosine_lr(40, 40, 0.05) == doctest::Approx(0.0).epsilon(1e-17));
    CHECK(cosine_lr(20, 40, 0.05) == doctest::Approx(0.025).epsilon(1e-15));
    CHECK_THROWS_AS(cosine_lr(41, 40, 0.05), ParamError);
    CHECK_THROWS_AS(cosine_lr(-1, 40, 0.05), ParamError);
    CHECK_THROWS_AS(cosine_lr(0, 0, 0.05), ParamError);
}

TEST_CASE("sgd_step: arithmetic, zero lr, frozen rejection") {
    LoraModule mod;
    mod.lora_id = 0;
    LoraFactors f;
    f.rank = 1;
    f.a = Mat::from_rows({{1.0}});
    f.b = Mat::from_rows({{2.0}});
    mod.per_layer.push_back(f);

    LoraFactors g;
    g.rank = 1;
    g.a = Mat::from_rows({{2.0}});
    g.b = Mat::from_rows({{0.0}});

    sgd_step(mod, {g}, 0.1);
    CHECK(mod.per_layer[0].a(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(mod.per_layer[0].b(0, 0) == 2.0);

    const LoraModule before = mod;
    sgd_step(mod, {g}, 0.0);
    CHECK(mod.per_layer[0].a.bit_equal(before.per_layer[0].a));

    mod.frozen = true;
    CHECK_THROWS_AS(sgd_step(mod, {g}, 0.1), LifecycleError);

    mod.frozen = false;
    CHECK_THROWS_AS(sgd_step(mod, {}, 0.1), ShapeError);
}

TEST_CASE("one sgd step on a convex toy reduces the loss") {
    // f(a) = 0.5 * a^2 through the same step rule.
    LoraModule mod;
    mod.lora_id = 0;
    LoraFactors f;
    f.rank = 1;
    f.a = Mat::from_rows({{3.0}});
    f.b = Mat::from_rows({{0.0}});
    mod.per_layer.push_back(f);
    const double loss0 = 0.5 * 9.0;
    LoraFactors g;
    g.rank = 1;
    g.a = Mat::from_rows({{3.0}});  // d/da 0.5 a^2 = a
    g.b = Mat::from_rows({{0.0}});
    sgd_step(mod, {g}, 0.1);
    const double a1 = mod.per_layer[0].a(0, 0);
    CHECK(0.5 * a1 * a1 < loss0);
}

TEST_CASE("apply_edit: full lifecycle, ES, and frozen-state verification") {
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    const BaseModel model = build_base(cfg, rng);
    LoraPool pool;
    KeyMemory mem;
    TrainRecipe recipe;
    recipe.rank = 2;

    SeededRng e0(derive_seed(cfg.seed, kEditRngTag));
    const EditTask task = task_for(model, 0, 3000);
    const EditRecord rec = apply_edit(model, pool, mem, task, recipe, e0);

    CHECK(rec.edit_id == 0);
    CHECK(rec.lora_id == 0);
    CHECK(rec.es.size() == 1);
    CHECK(rec.es[0] == 1);
    CHECK(rec.trainable_params == 2 * recipe.rank * (cfg.d_model + cfg.ffn_hidden));
    CHECK(pool.module(0).frozen);
    CHECK(mem.entries.size() == 1);

    // The edited input now routes to its module and predicts the new label.
    const RoutedResult routed = route_forward(model, pool, mem, task.instances[0].tokens);
    CHECK(routed.decision.adapted());
    CHECK(routed.trace.predicted_class() == task.instances[0].label);
}

TEST_CASE("apply_edit: no-op edit (label equals base prediction) converges immediately") {
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    const BaseModel model = build_base(cfg, rng);
    LoraPool pool;
    KeyMemory mem;
    TrainRecipe recipe;
    recipe.rank = 2;

    EditTask task;
    task.edit_id = 0;
    const std::vector<int> toks = tokens_for(cfg, 4000);
    task.instances.push_back(LabeledSeq{toks, forward(model, toks).predicted_class()});
    SeededRng e0(derive_seed(cfg.seed, kEditRngTag));
    const EditRecord rec = apply_edit(model, pool, mem, task, recipe, e0);
    CHECK(rec.es[0] == 1);
}

TEST_CASE("apply_edit: concurrent edit attempt is a lifecycle error") {
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    const BaseModel model = build_base(cfg, rng);
    LoraPool pool;
    KeyMemory mem;
    SeededRng r1(1);
    new_module(pool, cfg, 2, r1);  // left unfrozen on purpose
    TrainRecipe recipe;
    SeededRng r2(2);
    CHECK_THROWS_AS(apply_edit(model, pool, mem, task_for(model, 0, 1), recipe, r2),
                    LifecycleError);
}

TEST_CASE("isolation: earlier edits' outputs are bit-identical after later edits") {
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    const BaseModel model = build_base(cfg, rng);
    LoraPool pool;
    KeyMemory mem;
    TrainRecipe recipe;
    recipe.rank = 2;

    std::vector<EditTask> tasks;
    std::vector<std::vector<double>> logits_after_own_edit;
    for (int e = 0; e < 4; ++e) {
        tasks.push_back(task_for(model, e, 5000 + e));
        SeededRng erng(derive_seed(cfg.seed, kEditRngTag + e));
        apply_edit(model, pool, mem, tasks[e], recipe, erng);
        logits_after_own_edit.push_back(
            route_forward(model, pool, mem, tasks[e].instances[0].tokens).trace.logits);

        // Every earlier edit still produces byte-identical logits.
        for (int prev = 0; prev <= e; ++prev) {
            const RoutedResult r =
                route_forward(model, pool, mem, tasks[prev].instances[0].tokens);
            CHECK(bits_equal(r.trace.logits, logits_after_own_edit[prev]));
        }
    }
}

TEST_CASE("parameter efficiency: only the new module's floats change") {
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    const BaseModel model = build_base(cfg, rng);
    LoraPool pool;
    KeyMemory mem;
    TrainRecipe recipe;
    recipe.rank = 2;

    SeededRng e0(derive_seed(cfg.seed, kEditRngTag));
    apply_edit(model, pool, mem, task_for(model, 0, 6000), recipe, e0);

    // Snapshot everything, apply a second edit, diff.
    std::vector<double> base_before;
    model.weights.for_each_named([&](const std::string&, const Mat& m) {
        base_before.insert(base_before.end(), m.data.begin(), m.data.end());
    });
    const LoraModule mod0_before = pool.module(0);
    const size_t keys_before = mem.entries.size();

    SeededRng e1(derive_seed(cfg.seed, kEditRngTag + 1));
    const EditRecord rec = apply_edit(model, pool, mem, task_for(model, 1, 6001), recipe, e1);

    std::vector<double> base_after;
    model.weights.for_each_named([&](const std::string&, const Mat& m) {
        base_after.insert(base_after.end(), m.data.begin(), m.data.end());
    });
    CHECK(bits_equal(base_before, base_after));
    CHECK(content_hash(pool.module(0)) == content_hash(mod0_before));

    // Monotone growth: one module, |instances| keys.
    CHECK(pool.modules.size() == 2);
    CHECK(mem.entries.size() == keys_before + 1);
    CHECK(rec.trainable_params == trainable_param_count(pool.module(1)));
}

TEST_CASE("apply_stream: dense ids enforced, per-edit RNG reproducible") {
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    const BaseModel model = build_base(cfg, rng);
    TrainRecipe recipe;
    recipe.rank = 2;

    std::vector<EditTask> stream;
    for (int e = 0; e < 3; ++e) {
        stream.push_back(task_for(model, e, 7000 + e));
    }
    const StreamRunResult a = apply_stream(model, stream, recipe, 0.01,
                                           DistanceMetric::Cosine, 99);
    const StreamRunResult b = apply_stream(model, stream, recipe, 0.01,
                                           DistanceMetric::Cosine, 99);
    for (size_t m = 0; m < a.pool.modules.size(); ++m) {
        CHECK(content_hash(a.pool.modules[m]) == content_hash(b.pool.modules[m]));
    }

    std::vector<EditTask> bad = stream;
    bad[1].edit_id = 5;
    CHECK_THROWS_AS(apply_stream(model, bad, recipe, 0.01, DistanceMetric::Cosine, 99),
                    StateError);
}

TEST_CASE("train_module_on_task validates inputs") {
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    const BaseModel model = build_base(cfg, rng);
    LoraPool pool;
    SeededRng r(1);
    const int id = new_module(pool, cfg, 2, r);
    TrainRecipe recipe;

    EditTask empty_task;
    empty_task.edit_id = 0;
    CHECK_THROWS_AS(train_module_on_task(model, pool.module_mut(id), empty_task, recipe),
                    ParamError);

    freeze(pool, id);
    CHECK_THROWS_AS(
        train_module_on_task(model, pool.module_mut(id), task_for(model, 0, 1), recipe),
        LifecycleError);
}
