#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sola/adapters.hpp"
#include "sola/decision.hpp"
#include "sola/model_config.hpp"
#include "sola/numerics.hpp"

namespace sola {

// Linear weights are stored (out x in); activations are (seq x dim) with one
// row per token, so a projection is x * W^T.

struct LayerNormParams {
    Mat gain;  // 1 x d
    Mat bias;  // 1 x d
};

struct AttentionParams {
    Mat wq, wk, wv, wo;  // d x d
    Mat bq, bk, bv, bo;  // 1 x d
};

struct FfnParams {
    Mat w1;  // hidden x d
    Mat b1;  // 1 x hidden
    Mat w2;  // d x hidden   (the edited projection)
    Mat b2;  // 1 x d
};

struct BlockParams {
    LayerNormParams ln1;
    AttentionParams attn;
    LayerNormParams ln2;
    FfnParams ffn;
};

struct Weights {
    Mat tok_emb;  // vocab x d
    Mat pos_emb;  // seq x d
    std::vector<BlockParams> blocks;
    LayerNormParams ln_f;
    Mat head_w;  // classes x d
    Mat head_b;  // 1 x classes

    static Weights zeros_like(const ModelConfig& config);

    /// Visits every parameter matrix in a fixed order with a stable name.
    void for_each_named(const std::function<void(const std::string&, Mat&)>& fn);
    void for_each_named(const std::function<void(const std::string&, const Mat&)>& fn) const;

    long param_count() const;
};

/// Frozen tiny-transformer classifier. Weights are treated as immutable
/// after construction; training builds a new instance.
struct BaseModel {
    ModelConfig config;
    Weights weights;
};

struct LnCache {
    Mat xhat;                     // normalized input, same shape as x
    std::vector<double> inv_std;  // per row
};

struct BlockTrace {
    Mat x_in;      // block input
    LnCache ln1_cache;
    Mat ln1_out;
    Mat q, k, v;   // seq x d
    Mat probs;     // seq x seq, row-softmaxed attention weights
    Mat attn_ctx;  // probs * v
    Mat attn_out;
    Mat a_res;     // x_in + attn_out; input to the FFN sublayer
    LnCache ln2_cache;
    Mat ln2_out;
    Mat ffn_pre;   // pre-GELU, seq x hidden
    Mat ffn_act;   // GELU output; the edited projection's input
    Mat y_out;     // block output
};

/// Everything one forward pass computed, including the routing query vector
/// (last-token hidden state entering the master block's FFN sublayer, read
/// before any adapter can contribute).
struct ForwardTrace {
    std::vector<int> tokens;
    std::vector<BlockTrace> blocks;
    LnCache lnf_cache;
    Mat lnf_out;
    std::vector<double> logits;
    std::vector<double> query_vector;  // d_model
    std::optional<int> active_lora_id;
    std::optional<Decision> decision;  // filled by routing

    int predicted_class() const;
};

struct LabeledSeq {
    std::vector<int> tokens;
    int label = 0;

    bool operator==(const LabeledSeq& o) const = default;
};

struct BaseTrainResult {
    BaseModel model;
    double train_accuracy = 0.0;
    double final_loss = 0.0;
};

/// Gaussian init (std 0.02) for projections and embeddings; layer-norm gains
/// 1 and all biases 0. Deterministic per (config, seed).
BaseModel build_base(const ModelConfig& config, SeededRng& rng);

/// Per-instance SGD on all parameters (visit order = dataset order), with
/// the loss read on the last token. Returns a new frozen model.
BaseTrainResult train_base(const BaseModel& model, const std::vector<LabeledSeq>& dataset,
                           int epochs, double lr);

/// Full forward pass. `active` (may be null) is applied additively at every
/// edited projection: h = W0 x + B A x.
ForwardTrace forward(const BaseModel& model, const std::vector<int>& tokens,
                     const LoraModule* active = nullptr);

/// Reverse-mode gradients of the last-token cross-entropy w.r.t. the active
/// module's factors only; one entry per edited layer, in config order. Base
/// weights get no gradient through this path.
std::vector<LoraFactors> backward_lora(const BaseModel& model, const ForwardTrace& trace,
                                       int label, const LoraModule& active);

/// Gradients for every base parameter (used by train_base). No adapter may
/// be active in the trace.
Weights backward_full(const BaseModel& model, const ForwardTrace& trace, int label);

}  // namespace sola
