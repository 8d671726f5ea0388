#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "sola/io.hpp"
#include "sola/pipeline.hpp"

using namespace sola;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("sola_io_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab = 12;
    c.seq_len = 4;
    c.d_model = 8;
    c.n_blocks = 2;
    c.ffn_hidden = 12;
    c.n_classes = 4;
    c.edited_layers = {0, 1};
    c.seed = 55;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("model checkpoint round-trips bit-exactly") {
    TempDir tmp;
    const ModelConfig cfg = tiny_config();
    SeededRng rng(cfg.seed);
    const BaseModel model = build_base(cfg, rng);
    const fs::path file = tmp.path / "model.json";
    save_model(file, model);
    const BaseModel loaded = load_model(file);

    CHECK(loaded.config.vocab == cfg.vocab);
    CHECK(loaded.config.edited_layers == cfg.edited_layers);
    bool equal = true;
    std::vector<const Mat*> mats;
    loaded.weights.for_each_named([&](const std::string&, const Mat& m) { mats.push_back(&m); });
    size_t i = 0;
    model.weights.for_each_named(
        [&](const std::string&, const Mat& m) { equal &= m.bit_equal(*mats[i++]); });
    CHECK(equal);

    // Saving the loaded model reproduces the file byte for byte.
    const fs::path file2 = tmp.path / "model2.json";
    save_model(file2, loaded);
    CHECK(slurp(file) == slurp(file2));
}

TEST_CASE("pool and memory round-trip bit-exactly") {
    TempDir tmp;
    const ModelConfig cfg = tiny_config();
    LoraPool pool;
    SeededRng rng(1);
    for (int i = 0; i < 3; ++i) {
        const int id = new_module(pool, cfg, 2, rng);
        LoraModule& m = pool.module_mut(id);
        m.per_layer[0].b = gaussian_init(rng, cfg.d_model, 2, 0.37);
        freeze(pool, id);
    }
    const fs::path pf = tmp.path / "pool.json";
    save_pool(pf, pool, cfg);
    const LoraPool loaded = load_pool(pf);
    REQUIRE(loaded.modules.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(loaded.modules[i].lora_id == pool.modules[i].lora_id);
        CHECK(loaded.modules[i].frozen);
        CHECK(content_hash(loaded.modules[i]) == content_hash(pool.modules[i]));
    }

    KeyMemory mem;
    mem.alpha = 0.01;
    SeededRng qr(2);
    for (int i = 0; i < 5; ++i) {
        std::vector<double> q(cfg.d_model);
        for (double& x : q) {
            x = qr.next_uniform() - 0.5;
        }
        write_key(mem, q, i % 3, i, 0);
    }
    const fs::path mf = tmp.path / "mem.json";
    save_memory(mf, mem);
    const KeyMemory mloaded = load_memory(mf);
    CHECK(mloaded.alpha == mem.alpha);
    CHECK(mloaded.metric == mem.metric);
    REQUIRE(mloaded.entries.size() == mem.entries.size());
    for (size_t i = 0; i < mem.entries.size(); ++i) {
        CHECK(bits_equal(mloaded.entries[i].key, mem.entries[i].key));
        CHECK(mloaded.entries[i].edit_id == mem.entries[i].edit_id);
    }
}

TEST_CASE("run config: value and byte round-trips") {
    TempDir tmp;
    RunConfig cfg;
    cfg.model = tiny_config();
    cfg.recipe.rank = 3;
    cfg.alpha = 0.02;
    cfg.distance = "euclidean";
    cfg.benchmark.n_edits = 11;
    cfg.base_train.lr = 0.25;
    cfg.out_dir = "/tmp/somewhere";
    cfg.seed = 1234;

    const fs::path f1 = tmp.path / "c1.json";
    save_run_config(f1, cfg);
    const RunConfig loaded = load_run_config(f1);
    CHECK(loaded.model.vocab == cfg.model.vocab);
    CHECK(loaded.recipe.rank == 3);
    CHECK(loaded.recipe.init_std == cfg.recipe.init_std);
    CHECK(loaded.alpha == 0.02);
    CHECK(loaded.distance == "euclidean");
    CHECK(loaded.benchmark.n_edits == 11);
    CHECK(loaded.base_train.lr == 0.25);
    CHECK(loaded.seed == 1234);

    const fs::path f2 = tmp.path / "c2.json";
    save_run_config(f2, loaded);
    CHECK(slurp(f1) == slurp(f2));
}

TEST_CASE("labeled sequences and edit streams round-trip") {
    TempDir tmp;
    std::vector<LabeledSeq> seqs = {{{1, 2, 3, 4}, 2}, {{0, 0, 0, 0}, 0}, {{11, 5, 7, 1}, 3}};
    const fs::path sf = tmp.path / "seqs.jsonl";
    save_labeled_seqs(sf, seqs);
    CHECK(load_labeled_seqs(sf) == seqs);

    std::vector<EditTask> stream;
    EditTask t0;
    t0.edit_id = 0;
    t0.instances = {{{1, 2, 3, 4}, 1}, {{2, 1, 3, 4}, 1}};
    stream.push_back(t0);
    EditTask t1;
    t1.edit_id = 1;
    t1.instances = {{{5, 5, 5, 5}, 2}};
    stream.push_back(t1);
    const fs::path ef = tmp.path / "stream.jsonl";
    save_edit_stream(ef, stream);
    const std::vector<EditTask> loaded = load_edit_stream(ef);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].edit_id == 0);
    CHECK(loaded[0].instances == t0.instances);
    CHECK(loaded[1].instances == t1.instances);
}

TEST_CASE("edit records keep deterministic fields; wall time lives in timings.csv") {
    TempDir tmp;
    std::vector<EditRecord> records;
    EditRecord r;
    r.edit_id = 0;
    r.lora_id = 0;
    r.es = {1, 0};
    r.final_loss = 0.015625;  // exactly representable
    r.trainable_params = 80;
    r.wall_time_s = 1.25;
    records.push_back(r);

    const fs::path rf = tmp.path / "records.jsonl";
    save_edit_records(rf, records);
    const std::string text = slurp(rf);
    CHECK(text.find("wall") == std::string::npos);

    const std::vector<EditRecord> loaded = load_edit_records(rf);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].es == records[0].es);
    CHECK(loaded[0].final_loss == records[0].final_loss);
    CHECK(loaded[0].wall_time_s == 0.0);

    const fs::path tf = tmp.path / "timings.csv";
    save_timings(tf, records);
    CHECK(slurp(tf) == "edit_id,seconds\n0,1.25\n");
}

TEST_CASE("metrics round-trip and shortest-form doubles") {
    TempDir tmp;
    MetricsReport m;
    m.es_rate = 0.97;
    m.err = 0.97;
    m.trr = 0.1;
    m.trr_base = 0.1;
    m.holdout_bit_identical = true;
    m.mismatches = 0;
    m.trainable_params_per_edit = 768;
    m.total_memory_entries = 100;
    m.edits_applied = 100;
    m.edited_instances = 100;
    m.edited_correct = 97;
    m.rephrase_route_rate = 0.03;

    const fs::path mf = tmp.path / "metrics.json";
    save_metrics(mf, m);
    const MetricsReport loaded = load_metrics(mf);
    CHECK(loaded.es_rate == m.es_rate);
    CHECK(loaded.err == m.err);
    CHECK(loaded.trr == m.trr);
    CHECK(loaded.holdout_bit_identical);
    CHECK(loaded.trainable_params_per_edit == 768);

    // 0.1 prints as "0.1", not a 17-digit expansion.
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(768.0) == "768.0");
    const std::string text = slurp(mf);
    CHECK(text.find("0.97") != std::string::npos);
}

TEST_CASE("matrix JSON values round-trip through parse bit-exactly") {
    TempDir tmp;
    SeededRng rng(3);
    LoraPool pool;
    const ModelConfig cfg = tiny_config();
    const int id = new_module(pool, cfg, 2, rng);
    // Awkward values: subnormal-ish, negative zero, long fractions.
    LoraModule& m = pool.module_mut(id);
    m.per_layer[0].a(0, 0) = -0.0;
    m.per_layer[0].a(0, 1) = 1.0 / 3.0;
    m.per_layer[0].a(0, 2) = 5e-324;
    freeze(pool, id);
    const fs::path pf = tmp.path / "pool.json";
    save_pool(pf, pool, cfg);
    const LoraPool loaded = load_pool(pf);
    CHECK(content_hash(loaded.modules[0]) == content_hash(pool.modules[0]));
}

TEST_CASE("missing artifacts raise path-bearing errors") {
    TempDir tmp;
    CHECK_THROWS_AS(load_model(tmp.path / "absent.json"), IoError);
    CHECK_THROWS_AS(require_artifact(tmp.path / "absent.json", "gen"), IoError);
    try {
        require_artifact(tmp.path / "absent.json", "gen");
    } catch (const IoError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("absent.json") != std::string::npos);
        CHECK(msg.find("gen") != std::string::npos);
    }

    std::ofstream(tmp.path / "bad.json") << "{ not json";
    CHECK_THROWS_AS(load_model(tmp.path / "bad.json"), IoError);
}
