// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "forge/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "forge/checkpoint.hpp"
#include "forge/parallel.hpp"

namespace forge {

using nlohmann::json;
namespace fs = std::filesystem;

int version_index(const std::string& version_id) {
    if (version_id.size() < 2 || version_id[0] != 't')
        throw ConfigError("version id must look like t<k>, got '" + version_id + "'");
    for (std::size_t i = 1; i < version_id.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(version_id[i])))
            throw ConfigError("version id must look like t<k>, got '" + version_id + "'");
    return std::stoi(version_id.substr(1));
}

namespace {

ParamStore<float> store_from_model(const BaseModel<float>& model) {
    ParamStore<float> store;
    for (const auto& nt : model.layers) store.add(nt.name, nt.value);
    return store;
}

void model_from_store(BaseModel<float>& model, const ParamStore<float>& store) {
    for (auto& nt : model.layers) nt.value = store.value(nt.name);
}

// One Adam step of softmax cross-entropy on the full base model.
double base_train_step(ParamStore<float>& params, const ArchMeta& meta, const LabeledSet& batch,
                       const AdamConfig& adam) {
    Tape<float> tape;
    TapeCtx<float> cx(tape, params);
    std::vector<Var<float>> weights, biases;
    for (int l = 0; l < meta.layer_count(); ++l) {
        weights.push_back(cx.param(weight_name(l)));
        biases.push_back(cx.param(bias_name(l)));
    }
    auto logits = mlp_logits(cx, meta, cx.constant(batch.inputs), weights, biases);
    auto loss = cross_entropy_logits(logits, batch.labels);
    const double loss_value = loss.value()[0];
    auto grads = tape.backward(loss);
    params.adam_step(grads, adam);
    return loss_value;
}

LabeledSet take_batch(const LabeledSet& full, int batch, Rng& rng) {
    const int n = full.inputs.extent(0);
    const int dim = full.inputs.extent(1);
    LabeledSet out;
    out.inputs = Tensor<float>({batch, dim});
    out.labels.resize(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) {
        const auto row = static_cast<int>(rng.uniform_int(0, n - 1));
        for (int d = 0; d < dim; ++d) out.inputs.at(i, d) = full.inputs.at(row, d);
        out.labels[static_cast<std::size_t>(i)] = full.labels[static_cast<std::size_t>(row)];
    }
    return out;
}

double train_on_stream(BaseModel<float>& model, const std::vector<TaskSpec>& suite,
                       const GenericLabeler& labeler, int steps, double lr, int batch, Rng& rng,
                       const std::string& phase) {
    ParamStore<float> params = store_from_model(model);
    AdamConfig adam;
    adam.lr = lr;
    double last_loss = 0.0;
    if (steps == 0) {
        // probe loss only; weights stay at their recorded initialization
        const LabeledSet probe = sample_pretrain_batch(suite, labeler, batch, rng);
        Tape<float> tape;
        TapeCtx<float> cx(tape, params);
        std::vector<Var<float>> weights, biases;
        for (int l = 0; l < model.meta.layer_count(); ++l) {
            weights.push_back(cx.param(weight_name(l)));
            biases.push_back(cx.param(bias_name(l)));
        }
        auto logits = mlp_logits(cx, model.meta, cx.constant(probe.inputs), weights, biases);
        last_loss = cross_entropy_logits(logits, probe.labels).value()[0];
    }
    for (int step = 0; step < steps; ++step) {
        const LabeledSet batch_set = sample_pretrain_batch(suite, labeler, batch, rng);
        last_loss = base_train_step(params, model.meta, batch_set, adam);
        if (!std::isfinite(last_loss))
            throw TrainingError(phase + " diverged at step " + std::to_string(step));
    }
    model_from_store(model, params);
    return last_loss;
}

}  // namespace

BaseModel<float> pretrain_base(const CorpusConfig& cfg, const std::vector<TaskSpec>& suite) {
    Rng init_rng = Rng::stream(cfg.seed, "base-init");
    BaseModel<float> model = init_mlp<float>(cfg.arch_meta(), "t0", init_rng);
    Rng data_rng = Rng::stream(cfg.seed, "pretrain-stream");
    const GenericLabeler labeler = labeler_for_version(cfg.seed, 0);
    const double loss = train_on_stream(model, suite, labeler, cfg.pretrain_steps, cfg.pretrain_lr,
                                        cfg.batch, data_rng, "pretraining");
    model.meta.arch = "mlp";
    (void)loss;
    return model;
}

BaseModel<float> evolve_base(const BaseModel<float>& prev, int next_index, const CorpusConfig& cfg,
                             const std::vector<TaskSpec>& suite) {
    if (next_index != version_index(prev.version_id) + 1)
        throw ConfigError("evolution must extend the lineage one step at a time");
    if (cfg.evolve_steps <= 0)
        throw ConfigError("zero-step evolution is degenerate: the new version must differ");
    BaseModel<float> next = prev;
    next.version_id = "t" + std::to_string(next_index);
    next.lineage.push_back(next.version_id);
    Rng data_rng = Rng::stream(cfg.seed, "evolve-stream/" + next.version_id);
    const GenericLabeler labeler = labeler_for_version(cfg.seed, next_index);
    train_on_stream(next, suite, labeler, cfg.evolve_steps, cfg.evolve_lr, cfg.batch, data_rng,
                    "evolution to " + next.version_id);
    for (std::size_t i = 0; i < next.layers.size(); ++i) {
        const auto delta = (next.layers[i].value.vec() - prev.layers[i].value.vec()).norm();
        if (!(delta > 0.0f))
            throw TrainingError("evolution left layer " + next.layers[i].name + " unchanged");
    }
    return next;
}

double eval_zero_shot(const BaseModel<float>& base, const TaskSpec& task, const CorpusConfig& cfg) {
    const LabeledSet eval = task_eval_split(task, cfg.eval_examples);
    return mlp_accuracy(base, eval.inputs, eval.labels);
}

double eval_adapter(const BaseModel<float>& base, const LoraAdapter<float>& adapter,
                    const TaskSpec& task, const CorpusConfig& cfg) {
    const BaseModel<float> merged = merge_adapter(base, adapter);
    const LabeledSet eval = task_eval_split(task, cfg.eval_examples);
    return mlp_accuracy(merged, eval.inputs, eval.labels);
}

CorpusEntry finetune_lora(const BaseModel<float>& base, const TaskSpec& task, int rank, int seed,
                          const CorpusConfig& cfg) {
    if (rank < 1) throw ConfigError("LoRA rank must be >= 1");
    const std::vector<std::string> targets = default_target_layers(base, kMaxLoraRank);
    const std::string cell =
        base.version_id + "/" + task.task_id + "/" + std::to_string(seed);
    Rng rng = Rng::stream(cfg.seed, "lora/" + cell);
    LoraAdapter<float> adapter = init_adapter(base, targets, rank, rng);

    const LabeledSet train = task_train_split(task, cfg.train_examples);
    ParamStore<float> params;
    for (const auto& f : adapter.factors) {
        params.add("lora/" + f.layer_id + "/B", f.B);
        params.add("lora/" + f.layer_id + "/A", f.A);
    }
    AdamConfig adam;
    adam.lr = cfg.lora_lr;
    for (int step = 0; step < cfg.lora_steps; ++step) {
        const LabeledSet batch = take_batch(train, cfg.batch, rng);
        Tape<float> tape;
        TapeCtx<float> cx(tape, params);
        std::vector<Var<float>> weights, biases;
        for (int l = 0; l < base.meta.layer_count(); ++l) {
            auto w0 = cx.constant(*base.find(weight_name(l)));
            const bool targeted =
                std::find(targets.begin(), targets.end(), weight_name(l)) != targets.end();
            if (targeted) {
                auto b_factor = cx.param("lora/" + weight_name(l) + "/B");
                auto a_factor = cx.param("lora/" + weight_name(l) + "/A");
                weights.push_back(add(w0, matmul(b_factor, a_factor)));
            } else {
                weights.push_back(w0);
            }
            biases.push_back(cx.constant(*base.find(bias_name(l))));
        }
        auto logits = mlp_logits(cx, base.meta, cx.constant(batch.inputs), weights, biases);
        auto loss = cross_entropy_logits(logits, batch.labels);
        if (!std::isfinite(loss.value()[0]))
            throw TrainingError("LoRA fine-tuning diverged for cell " + cell + " at step " +
                                std::to_string(step));
        params.adam_step(tape.backward(loss), adam);
    }
    for (auto& f : adapter.factors) {
        f.B = params.value("lora/" + f.layer_id + "/B");
        f.A = params.value("lora/" + f.layer_id + "/A");
    }
    adapter.provenance = Provenance{"trained", base.version_id, task.task_id, seed};

    CorpusEntry entry;
    entry.adapter = std::move(adapter);
    entry.base_version = base.version_id;
    entry.task_id = task.task_id;
    entry.seed = seed;
    entry.rank = rank;
    entry.zero_shot = eval_zero_shot(base, task, cfg);
    entry.eval_accuracy = eval_adapter(base, entry.adapter, task, cfg);
    return entry;
}

void save_base_model(const BaseModel<float>& model, const fs::path& path) {
    Container c;
    json meta;
    meta["schema"] = "base-model";
    meta["version_id"] = model.version_id;
    meta["lineage"] = model.lineage;
    meta["arch"] = model.meta.arch;
    meta["input_dim"] = model.meta.input_dim;
    meta["hidden_dims"] = model.meta.hidden_dims;
    meta["output_dim"] = model.meta.output_dim;
    meta["activation"] = model.meta.activation;
    json order = json::array();
    for (const auto& nt : model.layers) {
        order.push_back(nt.name);
        c.put("layer/" + nt.name, nt.value);
    }
    meta["layer_order"] = order;
    c.meta_json = meta.dump();
    save_container(c, path);
}

BaseModel<float> load_base_model(const fs::path& path) {
    const Container c = load_container(path);
    const json meta = json::parse(c.meta_json);
    if (meta.value("schema", "") != "base-model")
        throw ArtifactError("'" + path.string() + "' is not a base-model checkpoint");
    BaseModel<float> model;
    model.version_id = meta.at("version_id").get<std::string>();
    model.lineage = meta.at("lineage").get<std::vector<std::string>>();
    model.meta.arch = meta.at("arch").get<std::string>();
    model.meta.input_dim = meta.at("input_dim").get<int>();
    model.meta.hidden_dims = meta.at("hidden_dims").get<std::vector<int>>();
    model.meta.output_dim = meta.at("output_dim").get<int>();
    model.meta.activation = meta.at("activation").get<std::string>();
    for (const auto& name : meta.at("layer_order"))
        model.layers.push_back({name.get<std::string>(), c.get("layer/" + name.get<std::string>())});
    return model;
}

void save_adapter(const LoraAdapter<float>& adapter, const fs::path& path) {
    adapter.validate();
    Container c;
    json meta;
    meta["schema"] = "lora-adapter";
    meta["rank"] = adapter.rank;
    meta["provenance"] = {{"kind", adapter.provenance.kind},
                          {"base_version", adapter.provenance.base_version},
                          {"task_id", adapter.provenance.task_id},
                          {"seed", adapter.provenance.seed}};
    json order = json::array();
    for (const auto& f : adapter.factors) {
        order.push_back(f.layer_id);
        c.put("factor/" + f.layer_id + "/B", f.B);
        c.put("factor/" + f.layer_id + "/A", f.A);
    }
    meta["layer_order"] = order;
    c.meta_json = meta.dump();
    save_container(c, path);
}

LoraAdapter<float> load_adapter(const fs::path& path) {
    const Container c = load_container(path);
    const json meta = json::parse(c.meta_json);
    if (meta.value("schema", "") != "lora-adapter")
        throw ArtifactError("'" + path.string() + "' is not an adapter checkpoint");
    LoraAdapter<float> adapter;
    adapter.rank = meta.at("rank").get<int>();
    const json& prov = meta.at("provenance");
    adapter.provenance = Provenance{prov.at("kind").get<std::string>(),
                                    prov.at("base_version").get<std::string>(),
                                    prov.at("task_id").get<std::string>(), prov.at("seed").get<int>()};
    for (const auto& name : meta.at("layer_order")) {
        LoraFactor<float> f;
        f.layer_id = name.get<std::string>();
        f.B = c.get("factor/" + f.layer_id + "/B");
        f.A = c.get("factor/" + f.layer_id + "/A");
        f.rank = adapter.rank;
        adapter.factors.push_back(std::move(f));
    }
    adapter.validate();
    return adapter;
}

std::string corpus_config_json(const CorpusConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["input_dim"] = cfg.input_dim;
    j["hidden_dim"] = cfg.hidden_dim;
    j["classes"] = cfg.classes;
    j["train_examples"] = cfg.train_examples;
    j["eval_examples"] = cfg.eval_examples;
    j["batch"] = cfg.batch;
    j["pretrain_steps"] = cfg.pretrain_steps;
    j["evolve_steps"] = cfg.evolve_steps;
    j["lora_steps"] = cfg.lora_steps;
    j["pretrain_lr"] = cfg.pretrain_lr;
    j["evolve_lr"] = cfg.evolve_lr;
    j["lora_lr"] = cfg.lora_lr;
    j["rank"] = cfg.rank;
    j["seeds_per_cell"] = cfg.seeds_per_cell;
    j["train_versions"] = cfg.train_versions;
    j["heldout_versions"] = cfg.heldout_versions;
    j["task_filter"] = cfg.task_filter;
    return j.dump();
}

CorpusConfig corpus_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    CorpusConfig cfg;
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.input_dim = j.at("input_dim").get<int>();
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.classes = j.at("classes").get<int>();
    cfg.train_examples = j.at("train_examples").get<int>();
    cfg.eval_examples = j.at("eval_examples").get<int>();
    cfg.batch = j.at("batch").get<int>();
    cfg.pretrain_steps = j.at("pretrain_steps").get<int>();
    cfg.evolve_steps = j.at("evolve_steps").get<int>();
    cfg.lora_steps = j.at("lora_steps").get<int>();
    cfg.pretrain_lr = j.at("pretrain_lr").get<double>();
    cfg.evolve_lr = j.at("evolve_lr").get<double>();
    cfg.lora_lr = j.at("lora_lr").get<double>();
    cfg.rank = j.at("rank").get<int>();
    cfg.seeds_per_cell = j.at("seeds_per_cell").get<int>();
    cfg.train_versions = j.at("train_versions").get<std::vector<std::string>>();
    cfg.heldout_versions = j.at("heldout_versions").get<std::vector<std::string>>();
    cfg.task_filter = j.at("task_filter").get<std::vector<std::string>>();
    return cfg;
}

const ManifestEntry* CorpusManifest::find(const std::string& version, const std::string& task,
                                          int seed) const {
    for (const auto& e : entries)
        if (e.base_version == version && e.task_id == task && e.seed == seed) return &e;
    return nullptr;
}

std::vector<const ManifestEntry*> CorpusManifest::cell(const std::string& version,
                                                       const std::string& task,
                                                       bool include_heldout) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.base_version == version && e.task_id == task && (include_heldout || !e.heldout))
            out.push_back(&e);
    return out;
}

namespace {

json manifest_to_json(const CorpusManifest& m) {
    json j;
    j["schema"] = "corpus-manifest";
    j["seed"] = m.seed;
    j["config"] = json::parse(m.config_echo);
    j["task_ids"] = m.task_ids;
    j["task_prompts"] = m.task_prompts;
    j["versions"] = m.versions;
    j["base_files"] = m.base_files;
    j["base_hashes"] = m.base_hashes;
    j["base_final_loss"] = m.base_final_loss;
    j["zero_shot"] = m.zero_shot;
    json entries = json::array();
    for (const auto& e : m.entries) {
        entries.push_back({{"base_version", e.base_version},
                           {"task_id", e.task_id},
                           {"seed", e.seed},
                           {"rank", e.rank},
                           {"file", e.file},
                           {"hash", e.hash},
                           {"eval_accuracy", e.eval_accuracy},
                           {"zero_shot", e.zero_shot},
                           {"heldout", e.heldout}});
    }
    j["entries"] = entries;
    j["manifest_hash"] = m.manifest_hash;
    return j;
}

CorpusManifest manifest_from_json(const json& j) {
    if (j.value("schema", "") != "corpus-manifest")
        throw ArtifactError("not a corpus manifest");
    CorpusManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_echo = j.at("config").dump();
    m.task_ids = j.at("task_ids").get<std::vector<std::string>>();
    m.task_prompts = j.at("task_prompts").get<std::map<std::string, std::string>>();
    m.versions = j.at("versions").get<std::vector<std::string>>();
    m.base_files = j.at("base_files").get<std::map<std::string, std::string>>();
    m.base_hashes = j.at("base_hashes").get<std::map<std::string, std::string>>();
    m.base_final_loss = j.at("base_final_loss").get<std::map<std::string, double>>();
    m.zero_shot = j.at("zero_shot").get<std::map<std::string, std::map<std::string, double>>>();
    for (const auto& e : j.at("entries")) {
        ManifestEntry entry;
        entry.base_version = e.at("base_version").get<std::string>();
        entry.task_id = e.at("task_id").get<std::string>();
        entry.seed = e.at("seed").get<int>();
        entry.rank = e.at("rank").get<int>();
        entry.file = e.at("file").get<std::string>();
        entry.hash = e.at("hash").get<std::string>();
        entry.eval_accuracy = e.at("eval_accuracy").get<double>();
        entry.zero_shot = e.at("zero_shot").get<double>();
        entry.heldout = e.at("heldout").get<bool>();
        m.entries.push_back(std::move(entry));
    }
    m.manifest_hash = j.at("manifest_hash").get<std::string>();
    return m;
}

std::vector<TaskSpec> filtered_suite(const CorpusConfig& cfg) {
    std::vector<TaskSpec> suite = make_task_suite(cfg.seed);
    if (cfg.task_filter.empty()) return suite;
    std::vector<TaskSpec> filtered;
    for (const auto& id : cfg.task_filter) {
        bool found = false;
        for (const auto& spec : suite)
            if (spec.task_id == id) {
                filtered.push_back(spec);
                found = true;
            }
        if (!found) throw ConfigError("unknown task id '" + id + "' in task filter");
    }
    return filtered;
}

}  // namespace

CorpusManifest build_corpus(const CorpusConfig& cfg, const fs::path& dir) {
    if (cfg.seeds_per_cell < 1) throw ConfigError("seeds_per_cell must be >= 1");
    const std::vector<TaskSpec> suite = filtered_suite(cfg);

    // ordered, duplicate-free version list spanning train + held-out
    std::vector<std::string> versions = cfg.train_versions;
    versions.insert(versions.end(), cfg.heldout_versions.begin(), cfg.heldout_versions.end());
    {
        std::set<std::string> unique(versions.begin(), versions.end());
        if (unique.size() != versions.size())
            throw ConfigError("duplicate version in corpus config");
    }
    int max_index = 0;
    for (const auto& v : versions) max_index = std::max(max_index, version_index(v));

    fs::create_directories(dir / "bases");

    CorpusManifest manifest;
    manifest.seed = cfg.seed;
    manifest.config_echo = corpus_config_json(cfg);
    for (const auto& spec : suite) {
        manifest.task_ids.push_back(spec.task_id);
        manifest.task_prompts[spec.task_id] = spec.prompt_text;
    }

    // lineage chain t0..t<max>; only requested versions are persisted
    std::map<std::string, BaseModel<float>> bases;
    BaseModel<float> current = pretrain_base(cfg, suite);
    const std::set<std::string> wanted(versions.begin(), versions.end());
    if (wanted.count("t0")) bases.emplace("t0", current);
    for (int k = 1; k <= max_index; ++k) {
        current = evolve_base(current, k, cfg, suite);
        const std::string id = "t" + std::to_string(k);
        if (wanted.count(id)) bases.emplace(id, current);
    }

    for (const auto& v : versions) {
        if (!bases.count(v)) throw ConfigError("version '" + v + "' missing from lineage chain");
        manifest.versions.push_back(v);
        const fs::path file = fs::path("bases") / (v + ".ckpt");
        save_base_model(bases.at(v), dir / file);
        manifest.base_files[v] = file.generic_string();
        manifest.base_hashes[v] = file_hash(dir / file);
        for (const auto& spec : suite)
            manifest.zero_shot[v][spec.task_id] = eval_zero_shot(bases.at(v), spec, cfg);
    }

    // independent cells trained in parallel, assembled in deterministic order
    struct Cell {
        std::string version;
        std::size_t task_index;
        int seed;
        bool heldout;
    };
    std::vector<Cell> cells;
    const std::set<std::string> heldout(cfg.heldout_versions.begin(), cfg.heldout_versions.end());
    for (const auto& v : versions)
        for (std::size_t t = 0; t < suite.size(); ++t)
            for (int s = 1; s <= cfg.seeds_per_cell; ++s)
                cells.push_back({v, t, s, heldout.count(v) > 0});

    for (const auto& v : versions)
        for (const auto& spec : suite) fs::create_directories(dir / v / spec.task_id);

    std::vector<CorpusEntry> trained(cells.size());
    parallel_for(static_cast<int>(cells.size()), [&](int i) {
        const Cell& cell = cells[static_cast<std::size_t>(i)];
        trained[static_cast<std::size_t>(i)] =
            finetune_lora(bases.at(cell.version), suite[cell.task_index], cfg.rank, cell.seed, cfg);
        trained[static_cast<std::size_t>(i)].heldout = cell.heldout;
    });

    std::set<std::string> keys;
    for (std::size_t i = 0; i < trained.size(); ++i) {
        CorpusEntry& entry = trained[i];
        const std::string key =
            entry.base_version + "/" + entry.task_id + "/" + std::to_string(entry.seed);
        if (!keys.insert(key).second)
            throw StructuralError("corpus cell collision for (" + key + ")");
        if (entry.eval_accuracy < entry.zero_shot + 0.05)
            throw TrainingError("adapter for " + key + " does not clear the zero-shot margin: " +
                                std::to_string(entry.eval_accuracy) + " vs zero-shot " +
                                std::to_string(entry.zero_shot));
        const fs::path file = fs::path(entry.base_version) / entry.task_id /
                              (std::to_string(entry.seed) + ".ckpt");
        save_adapter(entry.adapter, dir / file);
        ManifestEntry me;
        me.base_version = entry.base_version;
        me.task_id = entry.task_id;
        me.seed = entry.seed;
        me.rank = entry.rank;
        me.file = file.generic_string();
        me.hash = file_hash(dir / file);
        me.eval_accuracy = entry.eval_accuracy;
        me.zero_shot = entry.zero_shot;
        me.heldout = entry.heldout;
        manifest.entries.push_back(std::move(me));
    }

    // content hash over every referenced checkpoint: changes iff any byte does
    std::string digest;
    for (const auto& [v, h] : manifest.base_hashes) digest += v + ":" + h + ";";
    for (const auto& e : manifest.entries) digest += e.file + ":" + e.hash + ";";
    manifest.manifest_hash = hex64(fnv1a64(digest));

    save_manifest(manifest, dir / "manifest.json");
    return manifest;
}

void save_manifest(const CorpusManifest& manifest, const fs::path& path) {
    write_file_atomic(path, manifest_to_json(manifest).dump(2) + "\n");
}

CorpusManifest load_manifest(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ArtifactError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return manifest_from_json(j);
}

}  // namespace forge
