#pragma once

#include <cstdint>
#include <vector>

#include "sola/model_config.hpp"
#include "sola/numerics.hpp"

namespace sola {

/// Low-rank factor pair for one edited projection: delta = b * a with
/// a (r x k) and b (d x r). Created with b = 0 and a ~ N(0, std^2), so a
/// fresh pair is an exact no-op.
struct LoraFactors {
    Mat a;  // r x k
    Mat b;  // d x r
    int rank = 0;
};

/// One edit's adapter: a factor pair per edited layer, in the order of
/// ModelConfig::edited_layers. Frozen modules never change again.
struct LoraModule {
    int lora_id = -1;
    std::vector<LoraFactors> per_layer;
    bool frozen = false;
};

/// Append-only pool of adapters. Ids are dense 0..M-1 and at most one module
/// is unfrozen at any time (the one currently being trained).
struct LoraPool {
    std::vector<LoraModule> modules;

    bool has_unfrozen() const;
    const LoraModule& module(int lora_id) const;
    LoraModule& module_mut(int lora_id);
};

/// Appends an unfrozen module with fresh factors for every edited layer and
/// returns its id. Fails if an unfrozen module already exists or the rank is
/// out of range for any edited projection.
int new_module(LoraPool& pool, const ModelConfig& config, int rank, SeededRng& rng,
               double init_std = 0.3);

/// delta = b * (a * x) for a column-stacked input x (k x m).
Mat apply_delta(const LoraFactors& f, const Mat& x);

/// Row-convention variant used by the model: rows of x are k-dim inputs.
/// Computed as the transpose round-trip of apply_delta, so both routes are
/// bit-identical.
Mat apply_delta_rows(const LoraFactors& f, const Mat& x_rows);

void freeze(LoraPool& pool, int lora_id);

/// FNV-1a over the raw factor bytes of every layer (a then b, row-major).
/// Stable under everything except a change to the factor bytes themselves.
uint64_t content_hash(const LoraModule& m);

/// Trainable floats of one module: sum over layers of r * (d + k).
long trainable_param_count(const LoraModule& m);

}  // namespace sola
