#include "sola/model.hpp"

#include <cmath>
#include <string>

namespace sola {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

// y = x * w^T + b, with b broadcast over rows.
Mat linear(const Mat& x, const Mat& w, const Mat& b) {
    Mat y = matmul_nt(x, w);
    for (int i = 0; i < y.rows; ++i) {
        double* yr = y.row(i);
        const double* br = b.row(0);
        for (int j = 0; j < y.cols; ++j) {
            yr[j] += br[j];
        }
    }
    return y;
}

Mat colsum(const Mat& m) {
    Mat s(1, m.cols);
    for (int i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        for (int j = 0; j < m.cols; ++j) {
            s(0, j) += r[j];
        }
    }
    return s;
}

Mat add(const Mat& a, const Mat& b) {
    Mat c = a;
    for (size_t i = 0; i < c.data.size(); ++i) {
        c.data[i] += b.data[i];
    }
    return c;
}

void add_into(Mat& a, const Mat& b) {
    for (size_t i = 0; i < a.data.size(); ++i) {
        a.data[i] += b.data[i];
    }
}

Mat layer_norm(const Mat& x, const LayerNormParams& p, LnCache& cache) {
    Mat out(x.rows, x.cols);
    cache.xhat = Mat(x.rows, x.cols);
    cache.inv_std.assign(x.rows, 0.0);
    const int d = x.cols;
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) {
            mean += xr[j];
        }
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = xr[j] - mean;
            var += c * c;
        }
        var /= d;
        const double inv_std = 1.0 / std::sqrt(var + kLnEps);
        cache.inv_std[i] = inv_std;
        double* xh = cache.xhat.row(i);
        double* outr = out.row(i);
        for (int j = 0; j < d; ++j) {
            xh[j] = (xr[j] - mean) * inv_std;
            outr[j] = p.gain(0, j) * xh[j] + p.bias(0, j);
        }
    }
    return out;
}

// Backprop through layer norm; accumulates dgain/dbias when provided.
Mat layer_norm_backward(const Mat& dout, const LnCache& cache, const LayerNormParams& p,
                        Mat* dgain, Mat* dbias) {
    const int d = dout.cols;
    Mat dx(dout.rows, dout.cols);
    for (int i = 0; i < dout.rows; ++i) {
        const double* dr = dout.row(i);
        const double* xh = cache.xhat.row(i);
        const double inv_std = cache.inv_std[i];
        double m1 = 0.0;  // mean of dxhat
        double m2 = 0.0;  // mean of dxhat .* xhat
        for (int j = 0; j < d; ++j) {
            const double dxh = dr[j] * p.gain(0, j);
            m1 += dxh;
            m2 += dxh * xh[j];
        }
        m1 /= d;
        m2 /= d;
        double* dxr = dx.row(i);
        for (int j = 0; j < d; ++j) {
            const double dxh = dr[j] * p.gain(0, j);
            dxr[j] = inv_std * (dxh - m1 - xh[j] * m2);
        }
        if (dgain != nullptr) {
            for (int j = 0; j < d; ++j) {
                (*dgain)(0, j) += dr[j] * xh[j];
                (*dbias)(0, j) += dr[j];
            }
        }
    }
    return dx;
}

Mat row_softmax(const Mat& scores) {
    Mat out(scores.rows, scores.cols);
    for (int i = 0; i < scores.rows; ++i) {
        std::vector<double> row(scores.row(i), scores.row(i) + scores.cols);
        std::vector<double> sm = softmax(row);
        for (int j = 0; j < scores.cols; ++j) {
            out(i, j) = sm[j];
        }
    }
    return out;
}

// Index of `block` within config.edited_layers, or -1.
int edited_slot(const ModelConfig& config, int block) {
    for (size_t i = 0; i < config.edited_layers.size(); ++i) {
        if (config.edited_layers[i] == block) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

template <typename W, typename F>
void visit_weights(W& w, F&& f) {
    f("tok_emb", w.tok_emb);
    f("pos_emb", w.pos_emb);
    for (size_t i = 0; i < w.blocks.size(); ++i) {
        auto& b = w.blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        f(p + "ln1.gain", b.ln1.gain);
        f(p + "ln1.bias", b.ln1.bias);
        f(p + "attn.wq", b.attn.wq);
        f(p + "attn.wk", b.attn.wk);
        f(p + "attn.wv", b.attn.wv);
        f(p + "attn.wo", b.attn.wo);
        f(p + "attn.bq", b.attn.bq);
        f(p + "attn.bk", b.attn.bk);
        f(p + "attn.bv", b.attn.bv);
        f(p + "attn.bo", b.attn.bo);
        f(p + "ln2.gain", b.ln2.gain);
        f(p + "ln2.bias", b.ln2.bias);
        f(p + "ffn.w1", b.ffn.w1);
        f(p + "ffn.b1", b.ffn.b1);
        f(p + "ffn.w2", b.ffn.w2);
        f(p + "ffn.b2", b.ffn.b2);
    }
    f("ln_f.gain", w.ln_f.gain);
    f("ln_f.bias", w.ln_f.bias);
    f("head.w", w.head_w);
    f("head.b", w.head_b);
}

struct BackwardSinks {
    Weights* base = nullptr;                   // when set, accumulate base-weight grads
    std::vector<LoraFactors>* lora = nullptr;  // when set, accumulate adapter grads
    const LoraModule* active = nullptr;
    int stop_block = 0;  // backprop through blocks >= stop_block only
};

// Shared reverse pass from the loss down to sinks.stop_block. Activation
// gradients always flow; weight gradients go only to the requested sinks.
void backward_pass(const BaseModel& model, const ForwardTrace& trace, int label,
                   BackwardSinks sinks) {
    const ModelConfig& cfg = model.config;
    const Weights& w = model.weights;
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const int last = cfg.seq_len - 1;

    std::vector<double> p = softmax(trace.logits);
    std::vector<double> dlogits = p;
    dlogits[label] -= 1.0;

    // Head reads the last row of the final layer norm output.
    Mat dlnf_out(cfg.seq_len, cfg.d_model);
    for (int j = 0; j < cfg.d_model; ++j) {
        double acc = 0.0;
        for (int c = 0; c < cfg.n_classes; ++c) {
            acc += dlogits[c] * w.head_w(c, j);
        }
        dlnf_out(last, j) = acc;
    }
    if (sinks.base != nullptr) {
        for (int c = 0; c < cfg.n_classes; ++c) {
            for (int j = 0; j < cfg.d_model; ++j) {
                sinks.base->head_w(c, j) += dlogits[c] * trace.lnf_out(last, j);
            }
            sinks.base->head_b(0, c) += dlogits[c];
        }
    }

    Mat dx = layer_norm_backward(dlnf_out, trace.lnf_cache, w.ln_f,
                                 sinks.base ? &sinks.base->ln_f.gain : nullptr,
                                 sinks.base ? &sinks.base->ln_f.bias : nullptr);

    for (int b = cfg.n_blocks - 1; b >= sinks.stop_block; --b) {
        const BlockTrace& bt = trace.blocks[b];
        const BlockParams& bp = w.blocks[b];
        BlockParams* bg = sinks.base ? &sinks.base->blocks[b] : nullptr;

        // y = a_res + ffn_out
        Mat da_res = dx;       // residual branch
        const Mat& dffn = dx;  // FFN branch

        // FFN: ffn_out = ffn_act * w2^T + b2 (+ adapter delta)
        Mat dact = matmul(dffn, bp.ffn.w2);
        const int slot = edited_slot(cfg, b);
        if (slot >= 0 && sinks.active != nullptr) {
            const LoraFactors& f = sinks.active->per_layer[slot];
            // delta = (ffn_act * a^T) * b^T
            Mat u = matmul_nt(bt.ffn_act, f.a);  // seq x r
            Mat du = matmul(dffn, f.b);          // seq x r
            if (sinks.lora != nullptr) {
                LoraFactors& fg = (*sinks.lora)[slot];
                add_into(fg.b, matmul(transpose(dffn), u));
                add_into(fg.a, matmul(transpose(du), bt.ffn_act));
            }
            add_into(dact, matmul(du, f.a));
        }
        if (bg != nullptr) {
            add_into(bg->ffn.w2, matmul(transpose(dffn), bt.ffn_act));
            add_into(bg->ffn.b2, colsum(dffn));
        }
        Mat dpre(bt.ffn_pre.rows, bt.ffn_pre.cols);
        for (size_t i = 0; i < dpre.data.size(); ++i) {
            dpre.data[i] = dact.data[i] * gelu_grad(bt.ffn_pre.data[i]);
        }
        if (bg != nullptr) {
            add_into(bg->ffn.w1, matmul(transpose(dpre), bt.ln2_out));
            add_into(bg->ffn.b1, colsum(dpre));
        }
        Mat dln2_out = matmul(dpre, bp.ffn.w1);
        add_into(da_res, layer_norm_backward(dln2_out, bt.ln2_cache, bp.ln2,
                                             bg ? &bg->ln2.gain : nullptr,
                                             bg ? &bg->ln2.bias : nullptr));

        // a_res = x_in + attn_out
        Mat dx_in = da_res;
        const Mat& dattn_out = da_res;

        Mat dctx = matmul(dattn_out, bp.attn.wo);
        if (bg != nullptr) {
            add_into(bg->attn.wo, matmul(transpose(dattn_out), bt.attn_ctx));
            add_into(bg->attn.bo, colsum(dattn_out));
        }
        Mat dprobs = matmul_nt(dctx, bt.v);
        Mat dv = matmul(transpose(bt.probs), dctx);
        Mat dscores(dprobs.rows, dprobs.cols);
        for (int i = 0; i < dprobs.rows; ++i) {
            const double* dp = dprobs.row(i);
            const double* pr = bt.probs.row(i);
            double dot = 0.0;
            for (int j = 0; j < dprobs.cols; ++j) {
                dot += dp[j] * pr[j];
            }
            double* ds = dscores.row(i);
            for (int j = 0; j < dprobs.cols; ++j) {
                ds[j] = (dp[j] - dot) * pr[j];
            }
        }
        Mat dq = matmul(dscores, bt.k);
        Mat dk = matmul(transpose(dscores), bt.q);
        for (double& v : dq.data) {
            v *= scale;
        }
        for (double& v : dk.data) {
            v *= scale;
        }
        if (bg != nullptr) {
            add_into(bg->attn.wq, matmul(transpose(dq), bt.ln1_out));
            add_into(bg->attn.bq, colsum(dq));
            add_into(bg->attn.wk, matmul(transpose(dk), bt.ln1_out));
            add_into(bg->attn.bk, colsum(dk));
            add_into(bg->attn.wv, matmul(transpose(dv), bt.ln1_out));
            add_into(bg->attn.bv, colsum(dv));
        }
        Mat dln1_out = matmul(dq, bp.attn.wq);
        add_into(dln1_out, matmul(dk, bp.attn.wk));
        add_into(dln1_out, matmul(dv, bp.attn.wv));
        add_into(dx_in, layer_norm_backward(dln1_out, bt.ln1_cache, bp.ln1,
                                            bg ? &bg->ln1.gain : nullptr,
                                            bg ? &bg->ln1.bias : nullptr));
        dx = std::move(dx_in);
    }

    if (sinks.base != nullptr && sinks.stop_block == 0) {
        for (int t = 0; t < cfg.seq_len; ++t) {
            const int tok = trace.tokens[t];
            for (int j = 0; j < cfg.d_model; ++j) {
                sinks.base->tok_emb(tok, j) += dx(t, j);
                sinks.base->pos_emb(t, j) += dx(t, j);
            }
        }
    }
}

}  // namespace

Weights Weights::zeros_like(const ModelConfig& config) {
    Weights w;
    w.tok_emb = Mat(config.vocab, config.d_model);
    w.pos_emb = Mat(config.seq_len, config.d_model);
    w.blocks.resize(config.n_blocks);
    for (BlockParams& b : w.blocks) {
        b.ln1.gain = Mat(1, config.d_model);
        b.ln1.bias = Mat(1, config.d_model);
        b.attn.wq = Mat(config.d_model, config.d_model);
        b.attn.wk = Mat(config.d_model, config.d_model);
        b.attn.wv = Mat(config.d_model, config.d_model);
        b.attn.wo = Mat(config.d_model, config.d_model);
        b.attn.bq = Mat(1, config.d_model);
        b.attn.bk = Mat(1, config.d_model);
        b.attn.bv = Mat(1, config.d_model);
        b.attn.bo = Mat(1, config.d_model);
        b.ln2.gain = Mat(1, config.d_model);
        b.ln2.bias = Mat(1, config.d_model);
        b.ffn.w1 = Mat(config.ffn_hidden, config.d_model);
        b.ffn.b1 = Mat(1, config.ffn_hidden);
        b.ffn.w2 = Mat(config.d_model, config.ffn_hidden);
        b.ffn.b2 = Mat(1, config.d_model);
    }
    w.ln_f.gain = Mat(1, config.d_model);
    w.ln_f.bias = Mat(1, config.d_model);
    w.head_w = Mat(config.n_classes, config.d_model);
    w.head_b = Mat(1, config.n_classes);
    return w;
}

void Weights::for_each_named(const std::function<void(const std::string&, Mat&)>& fn) {
    visit_weights(*this, fn);
}

void Weights::for_each_named(const std::function<void(const std::string&, const Mat&)>& fn) const {
    visit_weights(*this, fn);
}

long Weights::param_count() const {
    long n = 0;
    for_each_named([&n](const std::string&, const Mat& m) { n += static_cast<long>(m.size()); });
    return n;
}

int ForwardTrace::predicted_class() const {
    int best = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

BaseModel build_base(const ModelConfig& config, SeededRng& rng) {
    config.validate();
    constexpr double kInitStd = 0.02;
    Weights w = Weights::zeros_like(config);
    w.tok_emb = gaussian_init(rng, config.vocab, config.d_model, kInitStd);
    w.pos_emb = gaussian_init(rng, config.seq_len, config.d_model, kInitStd);
    for (BlockParams& b : w.blocks) {
        for (double& v : b.ln1.gain.data) {
            v = 1.0;
        }
        b.attn.wq = gaussian_init(rng, config.d_model, config.d_model, kInitStd);
        b.attn.wk = gaussian_init(rng, config.d_model, config.d_model, kInitStd);
        b.attn.wv = gaussian_init(rng, config.d_model, config.d_model, kInitStd);
        b.attn.wo = gaussian_init(rng, config.d_model, config.d_model, kInitStd);
        for (double& v : b.ln2.gain.data) {
            v = 1.0;
        }
        b.ffn.w1 = gaussian_init(rng, config.ffn_hidden, config.d_model, kInitStd);
        b.ffn.w2 = gaussian_init(rng, config.d_model, config.ffn_hidden, kInitStd);
    }
    for (double& v : w.ln_f.gain.data) {
        v = 1.0;
    }
    w.head_w = gaussian_init(rng, config.n_classes, config.d_model, kInitStd);
    return BaseModel{config, std::move(w)};
}

ForwardTrace forward(const BaseModel& model, const std::vector<int>& tokens,
                     const LoraModule* active) {
    const ModelConfig& cfg = model.config;
    const Weights& w = model.weights;
    if (static_cast<int>(tokens.size()) != cfg.seq_len) {
        throw ShapeError("token sequence length " + std::to_string(tokens.size()) +
                         " != seq_len " + std::to_string(cfg.seq_len));
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg.vocab) {
            throw IndexError("token id " + std::to_string(t) + " outside vocab of " +
                             std::to_string(cfg.vocab));
        }
    }

    ForwardTrace trace;
    trace.tokens = tokens;
    if (active != nullptr) {
        trace.active_lora_id = active->lora_id;
    }
    trace.blocks.resize(cfg.n_blocks);

    Mat x(cfg.seq_len, cfg.d_model);
    for (int t = 0; t < cfg.seq_len; ++t) {
        for (int j = 0; j < cfg.d_model; ++j) {
            x(t, j) = w.tok_emb(tokens[t], j) + w.pos_emb(t, j);
        }
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (int b = 0; b < cfg.n_blocks; ++b) {
        BlockTrace& bt = trace.blocks[b];
        const BlockParams& bp = w.blocks[b];
        bt.x_in = x;
        bt.ln1_out = layer_norm(bt.x_in, bp.ln1, bt.ln1_cache);
        bt.q = linear(bt.ln1_out, bp.attn.wq, bp.attn.bq);
        bt.k = linear(bt.ln1_out, bp.attn.wk, bp.attn.bk);
        bt.v = linear(bt.ln1_out, bp.attn.wv, bp.attn.bv);
        Mat scores = matmul_nt(bt.q, bt.k);
        for (double& s : scores.data) {
            s *= scale;
        }
        bt.probs = row_softmax(scores);
        bt.attn_ctx = matmul(bt.probs, bt.v);
        bt.attn_out = linear(bt.attn_ctx, bp.attn.wo, bp.attn.bo);
        bt.a_res = add(bt.x_in, bt.attn_out);

        if (b == cfg.master_layer()) {
            trace.query_vector.assign(bt.a_res.row(cfg.seq_len - 1),
                                      bt.a_res.row(cfg.seq_len - 1) + cfg.d_model);
        }

        bt.ln2_out = layer_norm(bt.a_res, bp.ln2, bt.ln2_cache);
        bt.ffn_pre = linear(bt.ln2_out, bp.ffn.w1, bp.ffn.b1);
        bt.ffn_act = Mat(bt.ffn_pre.rows, bt.ffn_pre.cols);
        for (size_t i = 0; i < bt.ffn_pre.data.size(); ++i) {
            bt.ffn_act.data[i] = gelu(bt.ffn_pre.data[i]);
        }
        Mat ffn_out = linear(bt.ffn_act, bp.ffn.w2, bp.ffn.b2);
        const int slot = edited_slot(cfg, b);
        if (slot >= 0 && active != nullptr) {
            add_into(ffn_out, apply_delta_rows(active->per_layer[slot], bt.ffn_act));
        }
        bt.y_out = add(bt.a_res, ffn_out);
        x = bt.y_out;
    }

    trace.lnf_out = layer_norm(x, w.ln_f, trace.lnf_cache);
    const int last = cfg.seq_len - 1;
    trace.logits.assign(cfg.n_classes, 0.0);
    for (int c = 0; c < cfg.n_classes; ++c) {
        double acc = w.head_b(0, c);
        for (int j = 0; j < cfg.d_model; ++j) {
            acc += trace.lnf_out(last, j) * w.head_w(c, j);
        }
        trace.logits[c] = acc;
    }
    return trace;
}

std::vector<LoraFactors> backward_lora(const BaseModel& model, const ForwardTrace& trace,
                                       int label, const LoraModule& active) {
    if (!trace.active_lora_id.has_value() || *trace.active_lora_id != active.lora_id) {
        throw StateError("trace was not produced with module " + std::to_string(active.lora_id) +
                         " active");
    }
    if (label < 0 || label >= model.config.n_classes) {
        throw IndexError("label " + std::to_string(label) + " out of range");
    }
    std::vector<LoraFactors> grads;
    for (const LoraFactors& f : active.per_layer) {
        LoraFactors g;
        g.rank = f.rank;
        g.a = Mat(f.a.rows, f.a.cols);
        g.b = Mat(f.b.rows, f.b.cols);
        grads.push_back(std::move(g));
    }
    int stop = model.config.n_blocks;
    for (int b : model.config.edited_layers) {
        stop = std::min(stop, b);
    }
    BackwardSinks sinks;
    sinks.lora = &grads;
    sinks.active = &active;
    sinks.stop_block = stop;
    backward_pass(model, trace, label, sinks);
    return grads;
}

Weights backward_full(const BaseModel& model, const ForwardTrace& trace, int label) {
    if (trace.active_lora_id.has_value()) {
        throw StateError("backward_full requires an adapter-free trace");
    }
    if (label < 0 || label >= model.config.n_classes) {
        throw IndexError("label " + std::to_string(label) + " out of range");
    }
    Weights grads = Weights::zeros_like(model.config);
    BackwardSinks sinks;
    sinks.base = &grads;
    sinks.stop_block = 0;
    backward_pass(model, trace, label, sinks);
    return grads;
}

BaseTrainResult train_base(const BaseModel& model, const std::vector<LabeledSeq>& dataset,
                           int epochs, double lr) {
    if (dataset.empty()) {
        throw ParamError("train_base: empty dataset");
    }
    for (const LabeledSeq& s : dataset) {
        if (s.label < 0 || s.label >= model.config.n_classes) {
            throw IndexError("train_base: label " + std::to_string(s.label) + " out of range");
        }
    }

    BaseModel cur{model.config, model.weights};
    std::vector<Mat*> params;
    cur.weights.for_each_named(
        [&params](const std::string&, Mat& m) { params.push_back(&m); });

    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (const LabeledSeq& s : dataset) {
            ForwardTrace trace = forward(cur, s.tokens);
            Weights grads = backward_full(cur, trace, s.label);
            size_t idx = 0;
            grads.for_each_named([&](const std::string&, Mat& g) {
                Mat& p = *params[idx++];
                for (size_t i = 0; i < p.data.size(); ++i) {
                    p.data[i] -= lr * g.data[i];
                }
            });
        }
    }

    double correct = 0.0;
    double loss = 0.0;
    for (const LabeledSeq& s : dataset) {
        ForwardTrace trace = forward(cur, s.tokens);
        if (trace.predicted_class() == s.label) {
            correct += 1.0;
        }
        loss += cross_entropy(trace.logits, s.label);
    }
    BaseTrainResult result{std::move(cur), correct / static_cast<double>(dataset.size()),
                           loss / static_cast<double>(dataset.size())};
    return result;
}

}  // namespace sola
