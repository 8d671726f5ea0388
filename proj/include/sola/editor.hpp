#pragma once

#include <vector>

#include "sola/model.hpp"
#include "sola/routing.hpp"

namespace sola {

/// One edit: the instances (original plus any rephrases) that should all map
/// to the new label.
struct EditTask {
    int edit_id = -1;
    std::vector<LabeledSeq> instances;
};

/// SGD on the active module only, cosine-decayed learning rate.
struct TrainRecipe {
    double lr0 = 0.05;
    int epochs = 40;
    int rank = 4;
    double init_std = 0.3;  // Gaussian std for the a-factor at module creation
};

struct EditRecord {
    int edit_id = -1;
    int lora_id = -1;
    std::vector<int> es;  // 0/1 per instance, measured immediately post-edit
    double final_loss = 0.0;
    long trainable_params = 0;
    double wall_time_s = 0.0;  // reported separately, never in asserted files
};

/// Tag for deriving the per-edit RNG stream: edit i draws from
/// derive_seed(run_seed, kEditRngTag + i) in every harness, so replays and
/// baselines that retrain the same edit ids reproduce identical factors.
constexpr uint64_t kEditRngTag = 0xED170000ULL;

/// lr(step) = lr0 * 0.5 * (1 + cos(pi * step / total)).
double cosine_lr(int step, int total, double lr0);

/// param -= lr * grad on the module's factors. Rejects frozen modules.
void sgd_step(LoraModule& module, const std::vector<LoraFactors>& grads, double lr);

/// The full per-edit procedure: assign a fresh module, train it alone on the
/// task (each instance is one step, epochs x instances steps total, cosine
/// lr), write one key per instance, freeze, then measure ES through routed
/// inference. Verifies that no pre-existing module or key changed.
EditRecord apply_edit(const BaseModel& model, LoraPool& pool, KeyMemory& mem,
                      const EditTask& task, const TrainRecipe& recipe, SeededRng& rng);

/// Shared training core: trains `module` (must be unfrozen) on the task and
/// returns the mean loss over the final epoch. Also used by the drift
/// baseline, which re-trains shared modules.
double train_module_on_task(const BaseModel& model, LoraModule& module, const EditTask& task,
                            const TrainRecipe& recipe);

}  // namespace sola
