// Command-line driver for the editing pipeline: generate a benchmark, train
// the base classifier, apply the edit stream, evaluate, roll edits back, and
// run the drift/ablation sweeps. Every command reads and writes plain JSON
// and CSV files under one run directory.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sola/pipeline.hpp"

namespace {

std::vector<double> parse_doubles(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(std::stod(item));
        }
    }
    return out;
}

std::vector<int> parse_ints(const std::string& csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(std::stoi(item));
        }
    }
    return out;
}

// "0-1,2-3" -> {{0,1},{2,3}}; a bare index is a one-block window.
std::vector<std::vector<int>> parse_windows(const std::string& csv) {
    std::vector<std::vector<int>> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) {
            continue;
        }
        const auto dash = item.find('-');
        std::vector<int> window;
        if (dash == std::string::npos) {
            window.push_back(std::stoi(item));
        } else {
            const int lo = std::stoi(item.substr(0, dash));
            const int hi = std::stoi(item.substr(dash + 1));
            for (int b = lo; b <= hi; ++b) {
                window.push_back(b);
            }
        }
        out.push_back(std::move(window));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sola: reversible lifelong editing of a tiny classifier"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_given = false;
    app.add_option("--config", config_path, "run config JSON (defaults are used otherwise)");
    app.add_option("--out", out_dir, "run directory (env SOLA_OUT overrides)");
    app.add_option("--seed", seed, "override the config seed")
        ->each([&seed_given](const std::string&) { seed_given = true; });

    auto* cmd_gen = app.add_subcommand("gen", "write benchmark splits");
    auto* cmd_train = app.add_subcommand("train-base",
                                         "train the base model and finalize the edit stream");
    auto* cmd_edit = app.add_subcommand("edit", "apply the edit stream");
    auto* cmd_eval = app.add_subcommand("eval", "compute metrics");
    auto* cmd_pipeline = app.add_subcommand("pipeline", "gen + train-base + edit + eval");

    std::string edit_ids_csv;
    auto* cmd_rollback = app.add_subcommand("rollback", "remove the keys of selected edits");
    cmd_rollback->add_option("--edit-ids", edit_ids_csv, "comma-separated edit ids")->required();

    std::string radius_csv;
    auto* cmd_drift = app.add_subcommand("drift", "cluster-router drift sweep");
    cmd_drift->add_option("--radius-grid", radius_csv, "comma-separated radii");

    std::string ranks_csv;
    auto* cmd_rank = app.add_subcommand("ablate-rank", "sweep the adapter rank");
    cmd_rank->add_option("--ranks", ranks_csv, "comma-separated ranks");

    std::string layers_csv;
    auto* cmd_layers = app.add_subcommand("ablate-layers", "sweep the edited block window");
    cmd_layers->add_option("--layers", layers_csv, "windows like 0-1,1-2,2-3");

    auto* cmd_dump = app.add_subcommand("dump-keys", "export key/query vectors as CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        sola::RunConfig cfg;
        if (!config_path.empty()) {
            cfg = sola::load_run_config(config_path);
        }
        if (seed_given) {
            cfg.seed = seed;
        }
        if (const char* env_out = std::getenv("SOLA_OUT"); env_out != nullptr && *env_out) {
            out_dir = env_out;
        }
        if (out_dir.empty()) {
            std::cerr << "error: no output directory (--out or SOLA_OUT)\n";
            return 2;
        }
        cfg.out_dir = out_dir;
        const std::filesystem::path out(out_dir);

        if (cmd_gen->parsed()) {
            sola::run_gen(cfg, out);
            std::cout << "wrote benchmark splits to " << out.string() << "\n";
        } else if (cmd_train->parsed()) {
            const auto outcome = sola::run_train_base(cfg, out);
            std::cout << "base train accuracy " << outcome.train_accuracy << ", edit stream of "
                      << cfg.benchmark.n_edits << " edits ready";
            if (outcome.holdout_resampled > 0) {
                std::cout << " (resampled " << outcome.holdout_resampled
                          << " holdout items that landed within alpha of an edit key)";
            }
            std::cout << "\n";
        } else if (cmd_edit->parsed()) {
            sola::run_edit(cfg, out);
            std::cout << "edit stream applied; pool and key memory written\n";
        } else if (cmd_eval->parsed()) {
            const auto m = sola::run_eval(cfg, out);
            std::cout << "es_rate=" << m.es_rate << " err=" << m.err << " trr=" << m.trr
                      << " trr_base=" << m.trr_base << " mismatches=" << m.mismatches << "\n";
        } else if (cmd_pipeline->parsed()) {
            const auto m = sola::run_full_pipeline(cfg, out);
            std::cout << "pipeline done: es_rate=" << m.es_rate << " err=" << m.err
                      << " trr=" << m.trr << "\n";
        } else if (cmd_rollback->parsed()) {
            const int removed = sola::run_rollback(cfg, out, parse_ints(edit_ids_csv));
            std::cout << "removed " << removed << " key entries\n";
        } else if (cmd_drift->parsed()) {
            std::vector<double> grid = parse_doubles(radius_csv);
            if (grid.empty()) {
                grid = {1e-6, 0.05, 0.15, 0.3, 0.6};
            }
            const auto rows = sola::run_drift(cfg, out, grid);
            std::cout << "drift sweep over " << rows.size() << " radii written to "
                      << sola::paths::drift_csv(out).string() << "\n";
        } else if (cmd_rank->parsed()) {
            std::vector<int> ranks = parse_ints(ranks_csv);
            if (ranks.empty()) {
                ranks = sola::default_ablation_ranks();
            }
            sola::run_ablate_rank(cfg, out, ranks);
            std::cout << "rank sweep written to " << sola::paths::ablate_rank_csv(out).string()
                      << "\n";
        } else if (cmd_layers->parsed()) {
            std::vector<std::vector<int>> windows = parse_windows(layers_csv);
            if (windows.empty()) {
                windows = sola::default_layer_windows(cfg.model.n_blocks);
            }
            sola::run_ablate_layers(cfg, out, windows);
            std::cout << "layer sweep written to "
                      << sola::paths::ablate_layers_csv(out).string() << "\n";
        } else if (cmd_dump->parsed()) {
            sola::run_dump_keys(cfg, out);
            std::cout << "key vectors written to " << sola::paths::keys_csv(out).string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
