#include "sola/evalkit.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace sola {

namespace {

// Stream tags for deriving independent child seeds from the benchmark seed.
constexpr uint64_t kTagTrain = 0x01;
constexpr uint64_t kTagTest = 0x02;
constexpr uint64_t kTagHoldout = 0x03;
constexpr uint64_t kTagHoldoutFix = 0x04;
constexpr uint64_t kTagRephrase = 0x05;
constexpr uint64_t kTagProbe = 0x06;

std::vector<int> random_tokens(SeededRng& rng, const ModelConfig& cfg) {
    std::vector<int> t(cfg.seq_len);
    for (int& x : t) {
        x = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(cfg.vocab));
    }
    return t;
}

int task_label(const std::vector<int>& tokens, int n_classes) {
    long sum = 0;
    for (int t : tokens) {
        sum += t;
    }
    return static_cast<int>(sum % n_classes);
}

LabeledSeq random_instance(SeededRng& rng, const ModelConfig& cfg) {
    LabeledSeq s;
    s.tokens = random_tokens(rng, cfg);
    s.label = task_label(s.tokens, cfg.n_classes);
    return s;
}

// Fisher-Yates shuffle of all but the last token.
std::vector<int> permute_prefix(SeededRng& rng, const std::vector<int>& tokens) {
    std::vector<int> out = tokens;
    const int n = static_cast<int>(out.size()) - 1;
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(i + 1));
        std::swap(out[i], out[j]);
    }
    return out;
}

}  // namespace

std::vector<double> query_of(const BaseModel& model, const std::vector<int>& tokens) {
    return forward(model, tokens).query_vector;
}

Benchmark gen_splits(uint64_t seed, const BenchmarkParams& params, const ModelConfig& config) {
    config.validate();
    if (params.n_edits < 1 || params.instances_per_edit < 1 || params.holdout_size < 1 ||
        params.base_train_size < 1 || params.base_test_size < 1) {
        throw ParamError("benchmark sizes must all be >= 1");
    }
    if (params.n_edits > params.base_test_size) {
        throw ParamError("n_edits " + std::to_string(params.n_edits) +
                         " exceeds base_test_size " + std::to_string(params.base_test_size));
    }

    Benchmark bench;
    bench.seed = seed;

    SeededRng train_rng(derive_seed(seed, kTagTrain));
    for (int i = 0; i < params.base_train_size; ++i) {
        bench.base_train.push_back(random_instance(train_rng, config));
    }

    // Edit inputs come from base_test, so test sequences must be distinct.
    std::set<std::vector<int>> seen;
    SeededRng test_rng(derive_seed(seed, kTagTest));
    while (static_cast<int>(bench.base_test.size()) < params.base_test_size) {
        LabeledSeq s = random_instance(test_rng, config);
        if (seen.insert(s.tokens).second) {
            bench.base_test.push_back(std::move(s));
        }
    }

    // Holdout disjoint from the whole test pool, hence from every edit input.
    SeededRng holdout_rng(derive_seed(seed, kTagHoldout));
    std::set<std::vector<int>> holdout_seen;
    while (static_cast<int>(bench.upstream_holdout.size()) < params.holdout_size) {
        LabeledSeq s = random_instance(holdout_rng, config);
        if (seen.count(s.tokens) == 0 && holdout_seen.insert(s.tokens).second) {
            bench.upstream_holdout.push_back(std::move(s));
        }
    }
    return bench;
}

FinalizeReport finalize_benchmark(Benchmark& bench, const BaseModel& model,
                                  const BenchmarkParams& params, double alpha,
                                  DistanceMetric metric) {
    FinalizeReport report;
    bench.edit_stream.clear();

    SeededRng rephrase_rng(derive_seed(bench.seed, kTagRephrase));
    int next_test = 0;
    while (static_cast<int>(bench.edit_stream.size()) < params.n_edits) {
        if (next_test >= static_cast<int>(bench.base_test.size())) {
            throw ParamError("ran out of distinct test inputs after " +
                             std::to_string(bench.edit_stream.size()) + " of " +
                             std::to_string(params.n_edits) + " edits");
        }
        const LabeledSeq& src = bench.base_test[next_test++];
        const int y_new = (src.label + 1) % model.config.n_classes;
        if (forward(model, src.tokens).predicted_class() == y_new) {
            ++report.test_items_skipped;
            continue;
        }
        EditTask task;
        task.edit_id = static_cast<int>(bench.edit_stream.size());
        task.instances.push_back(LabeledSeq{src.tokens, y_new});
        for (int m = 1; m < params.instances_per_edit; ++m) {
            // Rephrase = permuted prefix; must still disagree with the base.
            bool placed = false;
            for (int attempt = 0; attempt < 32; ++attempt) {
                std::vector<int> toks = permute_prefix(rephrase_rng, src.tokens);
                if (toks == src.tokens) {
                    continue;
                }
                if (forward(model, toks).predicted_class() != y_new) {
                    task.instances.push_back(LabeledSeq{std::move(toks), y_new});
                    placed = true;
                    break;
                }
            }
            if (!placed) {
                throw ParamError("could not generate a rephrase instance for edit " +
                                 std::to_string(task.edit_id));
            }
        }
        bench.edit_stream.push_back(std::move(task));
    }

    // Every edit key is known before editing starts: keys are queries of the
    // edit instances and queries ignore adapters.
    std::vector<std::vector<double>> keys;
    for (const EditTask& task : bench.edit_stream) {
        for (const LabeledSeq& inst : task.instances) {
            keys.push_back(l2_normalize(query_of(model, inst.tokens)));
        }
    }
    auto collides = [&](const std::vector<int>& tokens) {
        const std::vector<double> q = l2_normalize(query_of(model, tokens));
        for (const std::vector<double>& k : keys) {
            if (key_distance(metric, q, k) < alpha) {
                return true;
            }
        }
        return false;
    };

    std::set<std::vector<int>> taken;
    for (const LabeledSeq& s : bench.base_test) {
        taken.insert(s.tokens);
    }
    for (const LabeledSeq& s : bench.upstream_holdout) {
        taken.insert(s.tokens);
    }
    SeededRng fix_rng(derive_seed(bench.seed, kTagHoldoutFix));
    for (LabeledSeq& h : bench.upstream_holdout) {
        while (collides(h.tokens)) {
            ++report.holdout_resampled;
            LabeledSeq fresh = random_instance(fix_rng, model.config);
            if (!taken.insert(fresh.tokens).second) {
                continue;
            }
            h = std::move(fresh);
        }
    }
    return report;
}

Benchmark gen_benchmark(uint64_t seed, const BenchmarkParams& params, const BaseModel& model,
                        double alpha, DistanceMetric metric) {
    Benchmark bench = gen_splits(seed, params, model.config);
    finalize_benchmark(bench, model, params, alpha, metric);
    return bench;
}

MetricsReport compute_metrics(const BaseModel& model, const LoraPool& pool, const KeyMemory& mem,
                              const Benchmark& bench, const std::vector<EditRecord>& records) {
    MetricsReport r;
    r.edits_applied = static_cast<int>(records.size());
    r.total_memory_entries = static_cast<long>(mem.entries.size());

    long es_hits = 0;
    long es_total = 0;
    for (const EditRecord& rec : records) {
        for (int bit : rec.es) {
            es_hits += bit;
            ++es_total;
        }
        if (r.trainable_params_per_edit == 0) {
            r.trainable_params_per_edit = rec.trainable_params;
        } else if (r.trainable_params_per_edit != rec.trainable_params) {
            throw StateError("edit records disagree on trainable parameter count");
        }
    }

    if (records.empty()) {
        r.err_on_empty = true;  // empty-set convention: ES/ERR read as 1.0
    } else {
        r.es_rate = static_cast<double>(es_hits) / static_cast<double>(es_total);
    }

    // ERR: stream-end accuracy over every edited instance, via routed
    // inference only (independent of the records).
    std::vector<int> assignments;
    std::vector<std::vector<double>> queries;
    int err_hits = 0;
    for (const EditTask& task : bench.edit_stream) {
        if (task.edit_id >= static_cast<int>(records.size())) {
            break;  // stream not (fully) applied; score what was
        }
        const EditRecord& rec = records[task.edit_id];
        for (const LabeledSeq& inst : task.instances) {
            RoutedResult routed = route_forward(model, pool, mem, inst.tokens);
            ++r.edited_instances;
            if (routed.trace.predicted_class() == inst.label) {
                ++err_hits;
            }
            ForwardTrace base_trace = forward(model, inst.tokens);
            if (bits_equal(routed.trace.logits, base_trace.logits)) {
                ++r.edited_restored_to_base;
            }
            assignments.push_back(rec.lora_id);
            queries.push_back(base_trace.query_vector);
        }
    }
    r.edited_correct = err_hits;
    if (r.edited_instances > 0) {
        r.err = static_cast<double>(err_hits) / static_cast<double>(r.edited_instances);
    }
    r.mismatches = mismatch_count(mem, assignments, queries);

    // TRR on the untouched holdout, against the base model as reference.
    int trr_hits = 0;
    int base_hits = 0;
    bool all_bit_identical = true;
    for (const LabeledSeq& h : bench.upstream_holdout) {
        RoutedResult routed = route_forward(model, pool, mem, h.tokens);
        ForwardTrace base_trace = forward(model, h.tokens);
        if (routed.trace.predicted_class() == h.label) {
            ++trr_hits;
        }
        if (base_trace.predicted_class() == h.label) {
            ++base_hits;
        }
        if (!bits_equal(routed.trace.logits, base_trace.logits)) {
            all_bit_identical = false;
        }
    }
    const double holdout_n = static_cast<double>(bench.upstream_holdout.size());
    r.trr = holdout_n > 0 ? trr_hits / holdout_n : 0.0;
    r.trr_base = holdout_n > 0 ? base_hits / holdout_n : 0.0;
    r.holdout_bit_identical = all_bit_identical;

    // Generalization probe: one permuted-prefix rephrase per edit; fraction
    // whose query still routes to that edit's module. Reported, not asserted.
    if (!records.empty()) {
        SeededRng probe_rng(derive_seed(bench.seed, kTagProbe));
        int routed_right = 0;
        int probes = 0;
        for (const EditTask& task : bench.edit_stream) {
            if (task.edit_id >= static_cast<int>(records.size())) {
                break;
            }
            std::vector<int> toks = permute_prefix(probe_rng, task.instances[0].tokens);
            RoutedResult routed = route_forward(model, pool, mem, toks);
            ++probes;
            if (routed.decision.adapted() &&
                *routed.decision.lora_id == records[task.edit_id].lora_id) {
                ++routed_right;
            }
        }
        r.rephrase_route_rate =
            probes > 0 ? static_cast<double>(routed_right) / static_cast<double>(probes) : 0.0;
    }
    return r;
}

}  // namespace sola
