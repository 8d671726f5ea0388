#include "sola/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <string>

#include "json.hpp"

namespace sola {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_dir(const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        throw IoError("cannot create output directory " + out.string());
    }
}

void write_resolved_config(const RunConfig& cfg, const fs::path& out) {
    ensure_dir(out);
    save_run_config(paths::config(out), cfg);
}

ModelConfig resolved_model_config(const RunConfig& cfg) {
    ModelConfig mc = cfg.model;
    mc.seed = derive_seed(cfg.seed, 0x0Du);  // model init stream
    return mc;
}

Benchmark load_eval_benchmark(const RunConfig& cfg, const fs::path& out) {
    Benchmark bench;
    bench.seed = cfg.seed;
    bench.edit_stream = load_edit_stream(paths::edit_stream(out));
    bench.upstream_holdout = load_labeled_seqs(paths::holdout(out));
    return bench;
}

void check_stream_ids(const std::vector<EditTask>& stream) {
    for (size_t i = 0; i < stream.size(); ++i) {
        if (stream[i].edit_id != static_cast<int>(i)) {
            throw StateError("edit stream ids must be dense and in order; line " +
                             std::to_string(i) + " has edit_id " +
                             std::to_string(stream[i].edit_id));
        }
    }
}

}  // namespace

StreamRunResult apply_stream(const BaseModel& model, const std::vector<EditTask>& stream,
                             const TrainRecipe& recipe, double alpha, DistanceMetric metric,
                             uint64_t seed) {
    check_stream_ids(stream);
    StreamRunResult result;
    result.mem.alpha = alpha;
    result.mem.metric = metric;
    for (const EditTask& task : stream) {
        SeededRng rng(derive_seed(seed, kEditRngTag + static_cast<uint64_t>(task.edit_id)));
        EditRecord record = apply_edit(model, result.pool, result.mem, task, recipe, rng);
        result.edit_seconds += record.wall_time_s;
        result.records.push_back(std::move(record));
    }
    return result;
}

void run_gen(const RunConfig& cfg, const fs::path& out) {
    write_resolved_config(cfg, out);
    const Benchmark bench = gen_splits(cfg.seed, cfg.benchmark, resolved_model_config(cfg));
    save_labeled_seqs(paths::base_train(out), bench.base_train);
    save_labeled_seqs(paths::base_test(out), bench.base_test);
    save_labeled_seqs(paths::holdout(out), bench.upstream_holdout);
}

TrainBaseOutcome run_train_base(const RunConfig& cfg, const fs::path& out) {
    require_artifact(paths::base_train(out), "gen");
    require_artifact(paths::base_test(out), "gen");
    require_artifact(paths::holdout(out), "gen");
    write_resolved_config(cfg, out);

    const ModelConfig mc = resolved_model_config(cfg);
    SeededRng init_rng(mc.seed);
    const BaseModel initial = build_base(mc, init_rng);

    Benchmark bench;
    bench.seed = cfg.seed;
    bench.base_train = load_labeled_seqs(paths::base_train(out));
    bench.base_test = load_labeled_seqs(paths::base_test(out));
    bench.upstream_holdout = load_labeled_seqs(paths::holdout(out));

    BaseTrainResult trained =
        train_base(initial, bench.base_train, cfg.base_train.epochs, cfg.base_train.lr);

    const FinalizeReport fin =
        finalize_benchmark(bench, trained.model, cfg.benchmark, cfg.alpha, cfg.metric());

    save_model(paths::base_model(out), trained.model);
    save_edit_stream(paths::edit_stream(out), bench.edit_stream);
    save_labeled_seqs(paths::holdout(out), bench.upstream_holdout);

    std::ofstream report(paths::train_report(out));
    report << json{{"train_accuracy", trained.train_accuracy},
                   {"final_loss", trained.final_loss},
                   {"holdout_resampled", fin.holdout_resampled},
                   {"test_items_skipped", fin.test_items_skipped}}
                  .dump(2)
           << "\n";

    return TrainBaseOutcome{trained.train_accuracy, trained.final_loss, fin.holdout_resampled,
                            fin.test_items_skipped};
}

void run_edit(const RunConfig& cfg, const fs::path& out) {
    require_artifact(paths::base_model(out), "train-base");
    require_artifact(paths::edit_stream(out), "train-base");
    write_resolved_config(cfg, out);

    const BaseModel model = load_model(paths::base_model(out));
    const std::vector<EditTask> stream = load_edit_stream(paths::edit_stream(out));
    StreamRunResult result =
        apply_stream(model, stream, cfg.recipe, cfg.alpha, cfg.metric(), cfg.seed);

    save_pool(paths::pool(out), result.pool, model.config);
    save_memory(paths::memory(out), result.mem);
    save_edit_records(paths::edit_records(out), result.records);
    save_timings(paths::timings(out), result.records);
}

MetricsReport run_eval(const RunConfig& cfg, const fs::path& out) {
    require_artifact(paths::base_model(out), "train-base");
    require_artifact(paths::pool(out), "edit");
    require_artifact(paths::memory(out), "edit");
    require_artifact(paths::edit_records(out), "edit");
    require_artifact(paths::holdout(out), "gen");
    write_resolved_config(cfg, out);

    const BaseModel model = load_model(paths::base_model(out));
    const LoraPool pool = load_pool(paths::pool(out));
    const KeyMemory mem = load_memory(paths::memory(out));
    const std::vector<EditRecord> records = load_edit_records(paths::edit_records(out));
    const Benchmark bench = load_eval_benchmark(cfg, out);

    const MetricsReport report = compute_metrics(model, pool, mem, bench, records);
    save_metrics(paths::metrics(out), report);
    save_metrics_csv(paths::metrics_csv(out), report);
    return report;
}

int run_rollback(const RunConfig& cfg, const fs::path& out, const std::vector<int>& edit_ids) {
    require_artifact(paths::memory(out), "edit");
    write_resolved_config(cfg, out);

    KeyMemory mem = load_memory(paths::memory(out));
    json log = json::array();
    int total = 0;
    for (int id : edit_ids) {
        const int removed = rollback(mem, id);
        total += removed;
        log.push_back(json{{"edit_id", id}, {"removed", removed}});
    }
    save_memory(paths::memory(out), mem);
    std::ofstream log_out(paths::rollback_log(out));
    log_out << log.dump(2) << "\n";
    return total;
}

std::vector<DriftRow> run_drift(const RunConfig& cfg, const fs::path& out,
                                const std::vector<double>& radius_grid) {
    require_artifact(paths::base_model(out), "train-base");
    require_artifact(paths::edit_stream(out), "train-base");
    require_artifact(paths::holdout(out), "gen");
    write_resolved_config(cfg, out);

    const BaseModel model = load_model(paths::base_model(out));
    const Benchmark bench = load_eval_benchmark(cfg, out);
    const std::vector<DriftRow> rows =
        drift_experiment(model, bench, radius_grid, cfg.recipe, cfg.seed);
    save_drift_csv(paths::drift_csv(out), rows);
    return rows;
}

namespace {

AblationRow sweep_point(const BaseModel& model, const Benchmark& bench,
                        const TrainRecipe& recipe, const RunConfig& cfg,
                        const std::string& setting) {
    StreamRunResult run =
        apply_stream(model, bench.edit_stream, recipe, cfg.alpha, cfg.metric(), cfg.seed);
    const MetricsReport m = compute_metrics(model, run.pool, run.mem, bench, run.records);
    AblationRow row;
    row.setting = setting;
    row.es = m.es_rate;
    row.err = m.err;
    row.trr = m.trr;
    row.edit_time_min = run.edit_seconds / 60.0;
    return row;
}

}  // namespace

std::vector<AblationRow> run_ablate_rank(const RunConfig& cfg, const fs::path& out,
                                         const std::vector<int>& ranks) {
    require_artifact(paths::base_model(out), "train-base");
    require_artifact(paths::edit_stream(out), "train-base");
    write_resolved_config(cfg, out);

    const BaseModel model = load_model(paths::base_model(out));
    const Benchmark bench = load_eval_benchmark(cfg, out);
    std::vector<AblationRow> rows;
    for (int rank : ranks) {
        TrainRecipe recipe = cfg.recipe;
        recipe.rank = rank;
        rows.push_back(sweep_point(model, bench, recipe, cfg, std::to_string(rank)));
    }
    save_ablation_csv(paths::ablate_rank_csv(out), "rank", rows);
    return rows;
}

std::vector<AblationRow> run_ablate_layers(const RunConfig& cfg, const fs::path& out,
                                           const std::vector<std::vector<int>>& windows) {
    require_artifact(paths::base_model(out), "train-base");
    require_artifact(paths::edit_stream(out), "train-base");
    write_resolved_config(cfg, out);

    const BaseModel loaded = load_model(paths::base_model(out));
    const Benchmark bench = load_eval_benchmark(cfg, out);
    std::vector<AblationRow> rows;
    for (const std::vector<int>& window : windows) {
        // Editing location does not touch base weights, so the checkpoint is
        // reused with a re-targeted config.
        ModelConfig mc = loaded.config;
        mc.edited_layers = window;
        mc.validate();
        const BaseModel model{mc, loaded.weights};
        const std::string setting =
            std::to_string(window.front()) + "-" + std::to_string(window.back());
        rows.push_back(sweep_point(model, bench, cfg.recipe, cfg, setting));
    }
    save_ablation_csv(paths::ablate_layers_csv(out), "layers", rows);
    return rows;
}

void run_dump_keys(const RunConfig& cfg, const fs::path& out) {
    require_artifact(paths::memory(out), "edit");
    require_artifact(paths::base_model(out), "train-base");
    require_artifact(paths::holdout(out), "gen");
    write_resolved_config(cfg, out);

    const KeyMemory mem = load_memory(paths::memory(out));
    const BaseModel model = load_model(paths::base_model(out));
    std::vector<std::vector<double>> holdout_queries;
    for (const LabeledSeq& h : load_labeled_seqs(paths::holdout(out))) {
        holdout_queries.push_back(l2_normalize(query_of(model, h.tokens)));
    }
    save_keys_csv(paths::keys_csv(out), mem, holdout_queries);
}

MetricsReport run_full_pipeline(const RunConfig& cfg, const fs::path& out) {
    run_gen(cfg, out);
    run_train_base(cfg, out);
    run_edit(cfg, out);
    return run_eval(cfg, out);
}

std::vector<int> default_ablation_ranks() { return {1, 2, 3, 4, 5, 10}; }

std::vector<std::vector<int>> default_layer_windows(int n_blocks) {
    std::vector<std::vector<int>> windows;
    for (int start = 0; start + 1 < n_blocks; ++start) {
        windows.push_back({start, start + 1});
    }
    return windows;
}

}  // namespace sola
