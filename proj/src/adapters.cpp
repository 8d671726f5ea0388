#include "sola/adapters.hpp"

#include <algorithm>
#include <cstring>
#include <string>

namespace sola {

bool LoraPool::has_unfrozen() const {
    return std::any_of(modules.begin(), modules.end(),
                       [](const LoraModule& m) { return !m.frozen; });
}

const LoraModule& LoraPool::module(int lora_id) const {
    if (lora_id < 0 || static_cast<size_t>(lora_id) >= modules.size()) {
        throw IndexError("lora_id " + std::to_string(lora_id) + " out of range for pool of " +
                         std::to_string(modules.size()));
    }
    return modules[lora_id];
}

LoraModule& LoraPool::module_mut(int lora_id) {
    return const_cast<LoraModule&>(static_cast<const LoraPool*>(this)->module(lora_id));
}

int new_module(LoraPool& pool, const ModelConfig& config, int rank, SeededRng& rng,
               double init_std) {
    config.validate();
    if (pool.has_unfrozen()) {
        throw LifecycleError("cannot create a new module while another is still unfrozen");
    }
    // Every edited projection here maps ffn_hidden -> d_model.
    const int d = config.d_model;
    const int k = config.ffn_hidden;
    if (rank < 1 || rank > std::min(d, k)) {
        throw ParamError("rank " + std::to_string(rank) + " outside [1, min(" + std::to_string(d) +
                         ", " + std::to_string(k) + ")]");
    }
    LoraModule mod;
    mod.lora_id = static_cast<int>(pool.modules.size());
    mod.frozen = false;
    for (size_t i = 0; i < config.edited_layers.size(); ++i) {
        LoraFactors f;
        f.rank = rank;
        f.a = gaussian_init(rng, rank, k, init_std);
        f.b = Mat::zeros(d, rank);
        mod.per_layer.push_back(std::move(f));
    }
    pool.modules.push_back(std::move(mod));
    return pool.modules.back().lora_id;
}

Mat apply_delta(const LoraFactors& f, const Mat& x) {
    return matmul(f.b, matmul(f.a, x));
}

Mat apply_delta_rows(const LoraFactors& f, const Mat& x_rows) {
    return transpose(apply_delta(f, transpose(x_rows)));
}

void freeze(LoraPool& pool, int lora_id) {
    LoraModule& m = pool.module_mut(lora_id);
    if (m.frozen) {
        throw LifecycleError("module " + std::to_string(lora_id) + " is already frozen");
    }
    m.frozen = true;
}

uint64_t content_hash(const LoraModule& m) {
    uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a offset basis
    auto mix = [&h](const Mat& mat) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(mat.data.data());
        const size_t n = mat.data.size() * sizeof(double);
        for (size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001B3ULL;  // FNV-1a prime
        }
    };
    for (const LoraFactors& f : m.per_layer) {
        mix(f.a);
        mix(f.b);
    }
    return h;
}

long trainable_param_count(const LoraModule& m) {
    long n = 0;
    for (const LoraFactors& f : m.per_layer) {
        n += static_cast<long>(f.a.size()) + static_cast<long>(f.b.size());
    }
    return n;
}

}  // namespace sola
