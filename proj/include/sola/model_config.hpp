#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sola/error.hpp"

namespace sola {

/// Architecture of the tiny transformer classifier. Edited layers are the
/// FFN output projections of the listed blocks; the first listed block hosts
/// the master decision layer.
struct ModelConfig {
    int vocab = 64;
    int seq_len = 16;
    int d_model = 32;
    int n_blocks = 4;
    int ffn_hidden = 64;
    int n_classes = 8;
    std::vector<int> edited_layers = {2, 3};  // block indices, ordered
    uint64_t seed = 7;

    int master_layer() const { return edited_layers.front(); }

    void validate() const {
        if (vocab < 1 || seq_len < 1 || d_model < 1 || n_blocks < 1 || ffn_hidden < 1 ||
            n_classes < 1) {
            throw ParamError("ModelConfig: all dimensions must be >= 1");
        }
        if (edited_layers.empty()) {
            throw ParamError("ModelConfig: edited_layers must be nonempty");
        }
        for (int b : edited_layers) {
            if (b < 0 || b >= n_blocks) {
                throw ParamError("ModelConfig: edited layer block " + std::to_string(b) +
                                 " outside [0, " + std::to_string(n_blocks) + ")");
            }
        }
    }
};

/// Stable name for an edited projection, used in checkpoint and pool files.
inline std::string edited_layer_name(int block) {
    return "blocks." + std::to_string(block) + ".ffn.out_proj";
}

}  // namespace sola
