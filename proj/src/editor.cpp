#include "sola/editor.hpp"

#include <chrono>
#include <cmath>
#include <string>

namespace sola {

double cosine_lr(int step, int total, double lr0) {
    if (total < 1 || step < 0 || step > total) {
        throw ParamError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                         std::to_string(total) + "]");
    }
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total));
}

void sgd_step(LoraModule& module, const std::vector<LoraFactors>& grads, double lr) {
    if (module.frozen) {
        throw LifecycleError("cannot apply gradients to frozen module " +
                             std::to_string(module.lora_id));
    }
    if (grads.size() != module.per_layer.size()) {
        throw ShapeError("gradient layer count " + std::to_string(grads.size()) +
                         " != module layer count " + std::to_string(module.per_layer.size()));
    }
    for (size_t l = 0; l < grads.size(); ++l) {
        LoraFactors& f = module.per_layer[l];
        const LoraFactors& g = grads[l];
        if (!f.a.same_shape(g.a) || !f.b.same_shape(g.b)) {
            throw ShapeError("gradient shape mismatch at edited layer " + std::to_string(l));
        }
        for (size_t i = 0; i < f.a.data.size(); ++i) {
            f.a.data[i] -= lr * g.a.data[i];
        }
        for (size_t i = 0; i < f.b.data.size(); ++i) {
            f.b.data[i] -= lr * g.b.data[i];
        }
    }
}

double train_module_on_task(const BaseModel& model, LoraModule& module, const EditTask& task,
                            const TrainRecipe& recipe) {
    if (task.instances.empty()) {
        throw ParamError("edit task " + std::to_string(task.edit_id) + " has no instances");
    }
    if (module.frozen) {
        throw LifecycleError("cannot train frozen module " + std::to_string(module.lora_id));
    }
    const int n = static_cast<int>(task.instances.size());
    const int total_steps = recipe.epochs * n;
    int step = 0;
    for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
        for (const LabeledSeq& inst : task.instances) {
            const double lr = cosine_lr(step, total_steps, recipe.lr0);
            ForwardTrace trace = forward(model, inst.tokens, &module);
            std::vector<LoraFactors> grads = backward_lora(model, trace, inst.label, module);
            sgd_step(module, grads, lr);
            ++step;
        }
    }
    double loss = 0.0;
    for (const LabeledSeq& inst : task.instances) {
        ForwardTrace trace = forward(model, inst.tokens, &module);
        loss += cross_entropy(trace.logits, inst.label);
    }
    return loss / n;
}

namespace {

// Snapshot of everything that must survive an edit untouched.
struct FrozenSnapshot {
    std::vector<uint64_t> module_hashes;
    std::vector<KeyEntry> keys;
};

FrozenSnapshot snapshot_frozen_state(const LoraPool& pool, const KeyMemory& mem) {
    FrozenSnapshot s;
    for (const LoraModule& m : pool.modules) {
        s.module_hashes.push_back(content_hash(m));
    }
    s.keys = mem.entries;
    return s;
}

void verify_frozen_state(const FrozenSnapshot& before, const LoraPool& pool,
                         const KeyMemory& mem) {
    for (size_t i = 0; i < before.module_hashes.size(); ++i) {
        if (content_hash(pool.modules[i]) != before.module_hashes[i]) {
            throw StateError("frozen module " + std::to_string(i) + " changed during an edit");
        }
    }
    for (size_t i = 0; i < before.keys.size(); ++i) {
        const KeyEntry& a = before.keys[i];
        const KeyEntry& b = mem.entries[i];
        if (a.key != b.key || a.lora_id != b.lora_id || a.edit_id != b.edit_id ||
            a.instance_id != b.instance_id) {
            throw StateError("stored key " + std::to_string(i) + " changed during an edit");
        }
    }
}

}  // namespace

EditRecord apply_edit(const BaseModel& model, LoraPool& pool, KeyMemory& mem,
                      const EditTask& task, const TrainRecipe& recipe, SeededRng& rng) {
    if (pool.has_unfrozen()) {
        throw LifecycleError("another edit is already in progress");
    }
    if (task.instances.empty()) {
        throw ParamError("edit task " + std::to_string(task.edit_id) + " has no instances");
    }
    for (const LabeledSeq& inst : task.instances) {
        if (inst.label < 0 || inst.label >= model.config.n_classes) {
            throw IndexError("edit label " + std::to_string(inst.label) + " out of range");
        }
    }

    const FrozenSnapshot before = snapshot_frozen_state(pool, mem);
    const auto t0 = std::chrono::steady_clock::now();

    EditRecord record;
    record.edit_id = task.edit_id;
    record.lora_id = new_module(pool, model.config, recipe.rank, rng, recipe.init_std);
    LoraModule& module = pool.module_mut(record.lora_id);

    record.final_loss = train_module_on_task(model, module, task, recipe);

    // One key per training instance, read from the adapter-independent query.
    for (size_t i = 0; i < task.instances.size(); ++i) {
        ForwardTrace trace = forward(model, task.instances[i].tokens);
        write_key(mem, trace.query_vector, record.lora_id, task.edit_id, static_cast<int>(i));
    }
    freeze(pool, record.lora_id);

    for (const LabeledSeq& inst : task.instances) {
        RoutedResult routed = route_forward(model, pool, mem, inst.tokens);
        record.es.push_back(routed.trace.predicted_class() == inst.label ? 1 : 0);
    }
    record.trainable_params = trainable_param_count(module);
    record.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    verify_frozen_state(before, pool, mem);
    return record;
}

}  // namespace sola
