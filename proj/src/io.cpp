#include "sola/io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sola {

using nlohmann::json;

namespace {

json read_json_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw IoError("cannot open " + file.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw IoError("malformed JSON in " + file.string() + ": " + e.what());
    }
    return j;
}

void write_text_file(const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + file.string());
    }
    out << text;
    if (!out) {
        throw IoError("write failed for " + file.string());
    }
}

void write_json_file(const std::filesystem::path& file, const json& j) {
    write_text_file(file, j.dump(2) + "\n");
}

std::vector<json> read_jsonl(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw IoError("cannot open " + file.string());
    }
    std::vector<json> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        try {
            lines.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw IoError("malformed JSON line in " + file.string() + ": " + e.what());
        }
    }
    return lines;
}

json mat_to_json(const Mat& m) {
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Mat mat_from_json(const json& j) {
    Mat m;
    m.rows = j.at("rows").get<int>();
    m.cols = j.at("cols").get<int>();
    m.data = j.at("data").get<std::vector<double>>();
    if (m.data.size() != static_cast<size_t>(m.rows) * static_cast<size_t>(m.cols)) {
        throw IoError("matrix data length does not match rows*cols");
    }
    if (!m.all_finite()) {
        throw IoError("matrix contains non-finite entries");
    }
    return m;
}

json model_config_to_json(const ModelConfig& c) {
    return json{{"vocab", c.vocab},         {"seq_len", c.seq_len},
                {"d_model", c.d_model},     {"n_blocks", c.n_blocks},
                {"ffn_hidden", c.ffn_hidden}, {"n_classes", c.n_classes},
                {"edited_layers", c.edited_layers}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.vocab = j.at("vocab").get<int>();
    c.seq_len = j.at("seq_len").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_blocks = j.at("n_blocks").get<int>();
    c.ffn_hidden = j.at("ffn_hidden").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.edited_layers = j.at("edited_layers").get<std::vector<int>>();
    c.seed = j.at("seed").get<uint64_t>();
    c.validate();
    return c;
}

json labeled_seq_to_json(const LabeledSeq& s) {
    return json{{"tokens", s.tokens}, {"label", s.label}};
}

LabeledSeq labeled_seq_from_json(const json& j) {
    return LabeledSeq{j.at("tokens").get<std::vector<int>>(), j.at("label").get<int>()};
}

}  // namespace

std::string format_double(double v) { return json(v).dump(); }

void save_run_config(const std::filesystem::path& file, const RunConfig& cfg) {
    json j;
    j["model"] = model_config_to_json(cfg.model);
    j["recipe"] = {{"lr0", cfg.recipe.lr0},
                   {"epochs", cfg.recipe.epochs},
                   {"rank", cfg.recipe.rank},
                   {"init_std", cfg.recipe.init_std}};
    j["routing"] = {{"alpha", cfg.alpha}, {"distance", cfg.distance}};
    j["benchmark"] = {{"n_edits", cfg.benchmark.n_edits},
                      {"instances_per_edit", cfg.benchmark.instances_per_edit},
                      {"holdout_size", cfg.benchmark.holdout_size},
                      {"base_train_size", cfg.benchmark.base_train_size},
                      {"base_test_size", cfg.benchmark.base_test_size}};
    j["base_train"] = {{"epochs", cfg.base_train.epochs}, {"lr", cfg.base_train.lr}};
    j["out_dir"] = cfg.out_dir;
    j["seed"] = cfg.seed;
    write_json_file(file, j);
}

RunConfig load_run_config(const std::filesystem::path& file) {
    const json j = read_json_file(file);
    RunConfig cfg;
    if (j.contains("model")) {
        cfg.model = model_config_from_json(j.at("model"));
    }
    if (j.contains("recipe")) {
        const json& r = j.at("recipe");
        cfg.recipe.lr0 = r.at("lr0").get<double>();
        cfg.recipe.epochs = r.at("epochs").get<int>();
        cfg.recipe.rank = r.at("rank").get<int>();
        cfg.recipe.init_std = r.value("init_std", 0.02);
    }
    if (j.contains("routing")) {
        cfg.alpha = j.at("routing").at("alpha").get<double>();
        cfg.distance = j.at("routing").at("distance").get<std::string>();
        metric_from_name(cfg.distance);  // validate
    }
    if (j.contains("benchmark")) {
        const json& b = j.at("benchmark");
        cfg.benchmark.n_edits = b.at("n_edits").get<int>();
        cfg.benchmark.instances_per_edit = b.at("instances_per_edit").get<int>();
        cfg.benchmark.holdout_size = b.at("holdout_size").get<int>();
        cfg.benchmark.base_train_size = b.at("base_train_size").get<int>();
        cfg.benchmark.base_test_size = b.at("base_test_size").get<int>();
    }
    if (j.contains("base_train")) {
        cfg.base_train.epochs = j.at("base_train").at("epochs").get<int>();
        cfg.base_train.lr = j.at("base_train").at("lr").get<double>();
    }
    cfg.out_dir = j.value("out_dir", std::string{});
    cfg.seed = j.value("seed", uint64_t{7});
    return cfg;
}

void save_model(const std::filesystem::path& file, const BaseModel& model) {
    json weights = json::object();
    model.weights.for_each_named(
        [&weights](const std::string& name, const Mat& m) { weights[name] = mat_to_json(m); });
    write_json_file(file, json{{"config", model_config_to_json(model.config)},
                               {"weights", weights}});
}

BaseModel load_model(const std::filesystem::path& file) {
    const json j = read_json_file(file);
    BaseModel model;
    model.config = model_config_from_json(j.at("config"));
    model.weights = Weights::zeros_like(model.config);
    const json& weights = j.at("weights");
    model.weights.for_each_named([&weights, &file](const std::string& name, Mat& m) {
        if (!weights.contains(name)) {
            throw IoError("checkpoint " + file.string() + " is missing weight " + name);
        }
        Mat loaded = mat_from_json(weights.at(name));
        if (!loaded.same_shape(m)) {
            throw IoError("checkpoint weight " + name + " has the wrong shape");
        }
        m = std::move(loaded);
    });
    return model;
}

void save_pool(const std::filesystem::path& file, const LoraPool& pool,
               const ModelConfig& config) {
    json arr = json::array();
    for (const LoraModule& mod : pool.modules) {
        json per_layer = json::object();
        for (size_t i = 0; i < mod.per_layer.size(); ++i) {
            per_layer[edited_layer_name(config.edited_layers[i])] = {
                {"a", mat_to_json(mod.per_layer[i].a)}, {"b", mat_to_json(mod.per_layer[i].b)}};
        }
        arr.push_back(json{{"lora_id", mod.lora_id},
                           {"frozen", mod.frozen},
                           {"per_layer", per_layer}});
    }
    write_json_file(file, arr);
}

LoraPool load_pool(const std::filesystem::path& file) {
    const json arr = read_json_file(file);
    LoraPool pool;
    for (const json& jm : arr) {
        LoraModule mod;
        mod.lora_id = jm.at("lora_id").get<int>();
        mod.frozen = jm.at("frozen").get<bool>();
        // Object keys sort lexicographically; block indices stay in layer
        // order because the name embeds the index after a fixed prefix.
        for (const auto& [name, factors] : jm.at("per_layer").items()) {
            (void)name;
            LoraFactors f;
            f.a = mat_from_json(factors.at("a"));
            f.b = mat_from_json(factors.at("b"));
            f.rank = f.a.rows;
            mod.per_layer.push_back(std::move(f));
        }
        pool.modules.push_back(std::move(mod));
    }
    return pool;
}

void save_memory(const std::filesystem::path& file, const KeyMemory& mem) {
    json entries = json::array();
    for (const KeyEntry& e : mem.entries) {
        entries.push_back(json{{"key", e.key},
                               {"lora_id", e.lora_id},
                               {"edit_id", e.edit_id},
                               {"instance_id", e.instance_id}});
    }
    write_json_file(file, json{{"alpha", mem.alpha},
                               {"distance", metric_name(mem.metric)},
                               {"entries", entries}});
}

KeyMemory load_memory(const std::filesystem::path& file) {
    const json j = read_json_file(file);
    KeyMemory mem;
    mem.alpha = j.at("alpha").get<double>();
    mem.metric = metric_from_name(j.value("distance", std::string("cosine")));
    for (const json& je : j.at("entries")) {
        KeyEntry e;
        e.key = je.at("key").get<std::vector<double>>();
        e.lora_id = je.at("lora_id").get<int>();
        e.edit_id = je.at("edit_id").get<int>();
        e.instance_id = je.at("instance_id").get<int>();
        mem.entries.push_back(std::move(e));
    }
    return mem;
}

void save_labeled_seqs(const std::filesystem::path& file, const std::vector<LabeledSeq>& seqs) {
    std::ostringstream out;
    for (const LabeledSeq& s : seqs) {
        out << labeled_seq_to_json(s).dump() << "\n";
    }
    write_text_file(file, out.str());
}

std::vector<LabeledSeq> load_labeled_seqs(const std::filesystem::path& file) {
    std::vector<LabeledSeq> seqs;
    for (const json& j : read_jsonl(file)) {
        seqs.push_back(labeled_seq_from_json(j));
    }
    return seqs;
}

void save_edit_stream(const std::filesystem::path& file, const std::vector<EditTask>& stream) {
    std::ostringstream out;
    for (const EditTask& t : stream) {
        json instances = json::array();
        for (const LabeledSeq& inst : t.instances) {
            instances.push_back(labeled_seq_to_json(inst));
        }
        out << json{{"edit_id", t.edit_id}, {"instances", instances}}.dump() << "\n";
    }
    write_text_file(file, out.str());
}

std::vector<EditTask> load_edit_stream(const std::filesystem::path& file) {
    std::vector<EditTask> stream;
    for (const json& j : read_jsonl(file)) {
        EditTask t;
        t.edit_id = j.at("edit_id").get<int>();
        for (const json& ji : j.at("instances")) {
            t.instances.push_back(labeled_seq_from_json(ji));
        }
        stream.push_back(std::move(t));
    }
    return stream;
}

void save_edit_records(const std::filesystem::path& file,
                       const std::vector<EditRecord>& records) {
    std::ostringstream out;
    for (const EditRecord& r : records) {
        out << json{{"edit_id", r.edit_id},
                    {"lora_id", r.lora_id},
                    {"es", r.es},
                    {"final_loss", r.final_loss},
                    {"trainable_params", r.trainable_params}}
                   .dump()
            << "\n";
    }
    write_text_file(file, out.str());
}

std::vector<EditRecord> load_edit_records(const std::filesystem::path& file) {
    std::vector<EditRecord> records;
    for (const json& j : read_jsonl(file)) {
        EditRecord r;
        r.edit_id = j.at("edit_id").get<int>();
        r.lora_id = j.at("lora_id").get<int>();
        r.es = j.at("es").get<std::vector<int>>();
        r.final_loss = j.at("final_loss").get<double>();
        r.trainable_params = j.at("trainable_params").get<long>();
        records.push_back(std::move(r));
    }
    return records;
}

void save_timings(const std::filesystem::path& file, const std::vector<EditRecord>& records) {
    std::ostringstream out;
    out << "edit_id,seconds\n";
    for (const EditRecord& r : records) {
        out << r.edit_id << "," << format_double(r.wall_time_s) << "\n";
    }
    write_text_file(file, out.str());
}

namespace {

json metrics_to_json(const MetricsReport& r) {
    return json{{"es_rate", r.es_rate},
                {"err", r.err},
                {"err_on_empty", r.err_on_empty},
                {"trr", r.trr},
                {"trr_base", r.trr_base},
                {"holdout_bit_identical", r.holdout_bit_identical},
                {"mismatches", r.mismatches},
                {"trainable_params_per_edit", r.trainable_params_per_edit},
                {"total_memory_entries", r.total_memory_entries},
                {"edits_applied", r.edits_applied},
                {"edited_instances", r.edited_instances},
                {"edited_correct", r.edited_correct},
                {"edited_restored_to_base", r.edited_restored_to_base},
                {"rephrase_route_rate", r.rephrase_route_rate}};
}

}  // namespace

void save_metrics(const std::filesystem::path& file, const MetricsReport& report) {
    write_json_file(file, metrics_to_json(report));
}

MetricsReport load_metrics(const std::filesystem::path& file) {
    const json j = read_json_file(file);
    MetricsReport r;
    r.es_rate = j.at("es_rate").get<double>();
    r.err = j.at("err").get<double>();
    r.err_on_empty = j.at("err_on_empty").get<bool>();
    r.trr = j.at("trr").get<double>();
    r.trr_base = j.at("trr_base").get<double>();
    r.holdout_bit_identical = j.at("holdout_bit_identical").get<bool>();
    r.mismatches = j.at("mismatches").get<int>();
    r.trainable_params_per_edit = j.at("trainable_params_per_edit").get<long>();
    r.total_memory_entries = j.at("total_memory_entries").get<long>();
    r.edits_applied = j.at("edits_applied").get<int>();
    r.edited_instances = j.at("edited_instances").get<int>();
    r.edited_correct = j.at("edited_correct").get<int>();
    r.edited_restored_to_base = j.at("edited_restored_to_base").get<int>();
    r.rephrase_route_rate = j.at("rephrase_route_rate").get<double>();
    return r;
}

void save_metrics_csv(const std::filesystem::path& file, const MetricsReport& r) {
    std::ostringstream out;
    out << "es_rate,err,trr,trr_base,mismatches,trainable_params_per_edit,total_memory_entries\n"
        << format_double(r.es_rate) << "," << format_double(r.err) << ","
        << format_double(r.trr) << "," << format_double(r.trr_base) << "," << r.mismatches << ","
        << r.trainable_params_per_edit << "," << r.total_memory_entries << "\n";
    write_text_file(file, out.str());
}

void save_drift_csv(const std::filesystem::path& file, const std::vector<DriftRow>& rows) {
    std::ostringstream out;
    out << "radius,updates,mismatches,err,trr\n";
    for (const DriftRow& r : rows) {
        out << format_double(r.radius) << "," << r.updates << "," << r.mismatches << ","
            << format_double(r.err) << "," << format_double(r.trr) << "\n";
    }
    write_text_file(file, out.str());
}

void save_ablation_csv(const std::filesystem::path& file, const std::string& setting_column,
                       const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << setting_column << ",es,err,trr,edit_time_min\n";
    for (const AblationRow& r : rows) {
        out << r.setting << "," << format_double(r.es) << "," << format_double(r.err) << ","
            << format_double(r.trr) << "," << format_double(r.edit_time_min) << "\n";
    }
    write_text_file(file, out.str());
}

void save_keys_csv(const std::filesystem::path& file, const KeyMemory& mem,
                   const std::vector<std::vector<double>>& holdout_queries) {
    std::ostringstream out;
    size_t dim = 0;
    if (!mem.entries.empty()) {
        dim = mem.entries[0].key.size();
    } else if (!holdout_queries.empty()) {
        dim = holdout_queries[0].size();
    }
    out << "kind,edit_id,instance_id,lora_id";
    for (size_t j = 0; j < dim; ++j) {
        out << ",v" << j;
    }
    out << "\n";
    for (const KeyEntry& e : mem.entries) {
        out << "key," << e.edit_id << "," << e.instance_id << "," << e.lora_id;
        for (double v : e.key) {
            out << "," << format_double(v);
        }
        out << "\n";
    }
    for (const std::vector<double>& q : holdout_queries) {
        out << "holdout,-1,-1,-1";
        for (double v : q) {
            out << "," << format_double(v);
        }
        out << "\n";
    }
    write_text_file(file, out.str());
}

void require_artifact(const std::filesystem::path& file, const std::string& produced_by) {
    if (!std::filesystem::exists(file)) {
        throw IoError("missing artifact " + file.string() + " (run '" + produced_by +
                      "' first)");
    }
}

}  // namespace sola
