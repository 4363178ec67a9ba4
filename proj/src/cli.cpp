#include "cacophony/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cacophony/eval.hpp"
#include "cacophony/gradcheck.hpp"
#include "cacophony/mel.hpp"
#include "cacophony/plot.hpp"
#include "cacophony/rng.hpp"
#include "cacophony/train.hpp"
#include "cacophony/wav.hpp"

#include <CLI11.hpp>
#include <json.hpp>

namespace cacophony {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string default_out(const std::string& leaf) {
    const char* root = std::getenv("CACOPHONY_RUN_DIR");
    return ((root && *root) ? fs::path(root) : fs::path(".")) / leaf;
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// Every leaf of the default config JSON becomes a --dotted.name override.
void collect_leaves(const json& node, const std::string& prefix, std::vector<std::string>& out) {
    for (auto it = node.begin(); it != node.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object())
            collect_leaves(*it, key, out);
        else
            out.push_back(key);
    }
}

json* leaf_at(json& root, const std::string& dotted) {
    json* node = &root;
    size_t pos = 0;
    while (true) {
        const size_t dot = dotted.find('.', pos);
        const std::string key = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (!node->contains(key)) return nullptr;
        node = &(*node)[key];
        if (dot == std::string::npos) return node;
        pos = dot + 1;
    }
}

void assign_typed(json& leaf, const std::string& text) {
    if (leaf.is_string()) {
        leaf = text;
        return;
    }
    if (leaf.is_boolean()) {
        if (text == "true" || text == "1")
            leaf = true;
        else if (text == "false" || text == "0")
            leaf = false;
        else
            throw CLI::ValidationError("expected a boolean, got '" + text + "'");
        return;
    }
    if (leaf.is_number_integer() || leaf.is_number_unsigned()) {
        leaf = json::parse(text);
        if (!leaf.is_number()) throw CLI::ValidationError("expected a number, got '" + text + "'");
        return;
    }
    leaf = std::stod(text);
}

// Merge a user config into the defaults, rejecting keys the schema does not
// know.
void merge_config(json& base, const json& user, const std::string& prefix) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw std::runtime_error("unknown config key: " + key);
        if (it->is_object() && base[it.key()].is_object())
            merge_config(base[it.key()], *it, key);
        else
            base[it.key()] = *it;
    }
}

SyntheticCorpus corpus_from_arg(const std::string& corpus_arg) {
    fs::path p(corpus_arg);
    if (fs::is_directory(p)) p /= "manifest.jsonl";
    return load_manifest(p.string());
}

struct CheckpointBundle {
    LoadedCheckpoint ck;
    ModelConfig model;
    Vocab vocab;
};

CheckpointBundle load_bundle(const std::string& checkpoint, const std::string& vocab_path) {
    CheckpointBundle b;
    b.ck = load_checkpoint(checkpoint);
    const json& cfg = b.ck.config;
    b.model = ModelConfig::from_json(cfg.contains("model") ? cfg.at("model") : cfg);
    b.vocab = Vocab::load(vocab_path);
    if (b.vocab.size() != b.model.vocab_size)
        throw std::runtime_error("vocab file does not match checkpoint vocab size");
    return b;
}

ParamStore params_from(const LoadedCheckpoint& ck) {
    ParamStore ps;
    for (const auto& e : ck.params.entries()) ps.add(e.name, e.tensor, e.decay);
    return ps;
}

// Registers one --dotted.name flag per leaf of the default config so any
// field can be overridden on the command line.
void register_dotted_flags(CLI::App* cmd, const json& defaults,
                           std::shared_ptr<std::vector<std::pair<std::string, std::string>>> sink) {
    std::vector<std::string> keys;
    collect_leaves(defaults, "", keys);
    for (const auto& key : keys) {
        cmd->add_option_function<std::string>(
            "--" + key, [sink, key](const std::string& value) { sink->push_back({key, value}); },
            "override config field " + key);
    }
}

int run_train(const std::string& stage, const std::vector<std::pair<std::string, std::string>>& overrides,
              const std::string& config_path, const std::string& corpus_arg) {
    TrainConfig defaults = stage == "mae" ? TrainConfig::desk_mae() : TrainConfig::desk_clap();
    json cfg_json = defaults.to_json();
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw std::runtime_error("cannot open config " + config_path);
        merge_config(cfg_json, json::parse(f), "");
    }
    for (const auto& [key, value] : overrides) {
        json* leaf = leaf_at(cfg_json, key);
        if (!leaf) throw std::runtime_error("unknown config key: " + key);
        assign_typed(*leaf, value);
    }

    TrainConfig cfg = TrainConfig::from_json(cfg_json);
    cfg.stage = stage;
    if (cfg.out_dir.empty()) cfg.out_dir = default_out("run-" + stage);
    SyntheticCorpus corpus = corpus_from_arg(corpus_arg);
    TrainResult res = stage == "mae" ? stage1_train(cfg, corpus) : stage2_train(cfg, corpus);
    std::cout << "final checkpoint: " << res.checkpoint_base << "\n";
    std::cout << "metrics: " << res.metrics_path << "\n";
    if (!res.metrics.empty()) std::cout << "final train loss: " << res.metrics.back().loss_total << "\n";
    return 0;
}

int run_gradcheck() {
    PrecisionScope f64(Precision::f64);
    struct Entry {
        std::string name;
        double err;
    };
    std::vector<Entry> table;
    Rng aux(2024);
    auto random_tensor = [&](const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) n *= d;
        std::vector<double> v(static_cast<size_t>(n));
        for (double& x : v) x = aux.gaussian();
        return Tensor::from(shape, std::move(v));
    };
    Tensor other = random_tensor({4, 5});
    Tensor rhs = random_tensor({5, 3});
    Tensor gain = random_tensor({5});
    Tensor bias = random_tensor({5});
    std::vector<int> gather_idx = {2, 0, 2, 3};
    std::vector<int> targets = {1, 4, 0, 2};
    auto reduce = [&](const Tensor& t) { return mean(mul(t, t)); };

    const std::vector<std::pair<std::string, std::function<Tensor(const Tensor&)>>> cases = {
        {"add", [&](const Tensor& x) { return reduce(add(x, other)); }},
        {"mul", [&](const Tensor& x) { return reduce(mul(x, other)); }},
        {"scale", [&](const Tensor& x) { return reduce(scale(x, -1.7)); }},
        {"add_rowvec", [&](const Tensor& x) { return reduce(add_rowvec(x, gain)); }},
        {"matmul", [&](const Tensor& x) { return reduce(matmul(x, rhs)); }},
        {"transpose", [&](const Tensor& x) { return reduce(transpose(x)); }},
        {"softmax", [&](const Tensor& x) { return reduce(softmax(x)); }},
        {"layer_norm", [&](const Tensor& x) { return reduce(layer_norm(x, gain, bias)); }},
        {"silu", [&](const Tensor& x) { return reduce(silu(x)); }},
        {"sigmoid", [&](const Tensor& x) { return reduce(sigmoid(x)); }},
        {"exp", [&](const Tensor& x) { return reduce(cacophony::exp(scale(x, 0.3))); }},
        {"log", [&](const Tensor& x) { return reduce(cacophony::log(add(mul(x, x), Tensor::full({4, 5}, 1.5)))); }},
        {"sum", [&](const Tensor& x) { return sum(x); }},
        {"mean", [&](const Tensor& x) { return mean(x); }},
        {"concat", [&](const Tensor& x) { return reduce(concat_rows({x, other})); }},
        {"slice", [&](const Tensor& x) { return reduce(slice_cols(slice_rows(x, 1, 3), 0, 4)); }},
        {"gather_rows", [&](const Tensor& x) { return reduce(gather_rows(x, gather_idx)); }},
        {"embedding_lookup", [&](const Tensor& x) { return reduce(embedding_lookup(x, gather_idx)); }},
        // weight by `other`: the plain mean of squared unit rows is constant
        {"l2_normalize",
         [&](const Tensor& x) { return mean(mul(l2_normalize(add(x, Tensor::full({4, 5}, 2.0))), other)); }},
        {"cross_entropy_from_logits", [&](const Tensor& x) { return cross_entropy_from_logits(x, targets); }},
        {"mul_scalar", [&](const Tensor& x) { return reduce(mul_scalar(x, slice_cols(slice_rows(x, 0, 1), 0, 1))); }},
    };

    bool ok = true;
    std::printf("%-28s %s\n", "primitive", "max relative error");
    for (const auto& [name, fn] : cases) {
        double worst = 0.0;
        for (uint64_t seed = 0; seed < 10; ++seed) {
            Rng rng(mix_seed(777, seed));
            int64_t n = 20;
            std::vector<double> v(static_cast<size_t>(n));
            for (double& x : v) x = rng.gaussian();
            worst = std::max(worst, grad_check(fn, Tensor::from({4, 5}, v)));
        }
        std::printf("%-28s %.3e\n", name.c_str(), worst);
        ok = ok && worst < 1e-4;
    }
    std::printf("%s\n", ok ? "all primitives below 1e-4" : "FAILURES above 1e-4");
    return ok ? 0 : 2;
}

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"cacophony: two-stage audio-text training and evaluation"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate a deterministic synthetic audio-text corpus");
    uint64_t synth_seed = 7;
    int synth_n = 8;
    double dur_min = 1.0, dur_max = 3.0;
    int max_events = 3;
    std::string synth_out;
    std::string kinds_arg = "sine,chirp,noise,am_tone,click_train";
    synth->add_option("--seed", synth_seed, "corpus seed");
    synth->add_option("--n", synth_n, "number of clips");
    synth->add_option("--dur-min", dur_min, "minimum clip seconds");
    synth->add_option("--dur-max", dur_max, "maximum clip seconds");
    synth->add_option("--max-events", max_events, "events per clip upper bound");
    synth->add_option("--kinds", kinds_arg, "comma list of event kinds");
    synth->add_option("--out", synth_out, "output directory");

    // train commands share the config plumbing; every config leaf is also a
    // literal --dotted.name flag
    std::string mae_config, mae_corpus, clap_config, clap_corpus;
    std::vector<std::string> mae_set, clap_set;
    auto mae_overrides = std::make_shared<std::vector<std::pair<std::string, std::string>>>();
    auto clap_overrides = std::make_shared<std::vector<std::pair<std::string, std::string>>>();
    auto* train_mae = app.add_subcommand("train-mae", "stage-1 masked-autoencoder pretraining");
    train_mae->add_option("--config", mae_config, "JSON config file");
    train_mae->add_option("--corpus", mae_corpus, "corpus directory or manifest")->required();
    train_mae->add_option("--set", mae_set, "dotted config override key=value")->take_all();
    register_dotted_flags(train_mae, TrainConfig::desk_mae().to_json(), mae_overrides);
    auto* train_clap = app.add_subcommand("train-clap", "stage-2 contrastive-captioning training");
    train_clap->add_option("--config", clap_config, "JSON config file");
    train_clap->add_option("--corpus", clap_corpus, "corpus directory or manifest")->required();
    train_clap->add_option("--set", clap_set, "dotted config override key=value")->take_all();
    register_dotted_flags(train_clap, TrainConfig::desk_clap().to_json(), clap_overrides);

    // eval commands
    std::string ckpt, vocab_path, corpus_arg, out_dir, ks_arg = "1,5,10";
    auto add_eval_common = [&](CLI::App* cmd, bool needs_corpus) {
        cmd->add_option("--checkpoint", ckpt, "checkpoint base path (no extension)")->required();
        cmd->add_option("--vocab", vocab_path, "vocab file")->required();
        if (needs_corpus) cmd->add_option("--corpus", corpus_arg, "corpus directory or manifest")->required();
        cmd->add_option("--out", out_dir, "report directory");
    };
    auto* eval_ret = app.add_subcommand("eval-retrieval", "recall-at-k retrieval over a corpus");
    add_eval_common(eval_ret, true);
    eval_ret->add_option("--ks", ks_arg, "comma list of k values");
    uint64_t eval_seed = 0;
    int patch_budget = 512;
    eval_ret->add_option("--seed", eval_seed, "subsample seed for over-budget clips");
    eval_ret->add_option("--patch-budget", patch_budget, "audio patch budget");

    auto* eval_zs = app.add_subcommand("eval-zeroshot", "zero-shot classification via prompt templates");
    add_eval_common(eval_zs, true);
    std::string labels_arg, template_arg = "This is a sound of [label]";
    eval_zs->add_option("--labels", labels_arg, "comma list of label texts")->required();
    eval_zs->add_option("--template", template_arg, "prompt template containing [label]");
    eval_zs->add_option("--seed", eval_seed, "subsample seed");
    eval_zs->add_option("--patch-budget", patch_budget, "audio patch budget");

    auto* eval_gap = app.add_subcommand("eval-gap", "modality gap between audio and text centroids");
    add_eval_common(eval_gap, true);
    eval_gap->add_option("--seed", eval_seed, "subsample seed");
    eval_gap->add_option("--patch-budget", patch_budget, "audio patch budget");

    auto* caption = app.add_subcommand("caption", "generate a caption for a WAV clip");
    std::string wav_arg;
    double temperature = 0.1;
    int max_len = 20;
    uint64_t caption_seed = 0;
    add_eval_common(caption, false);
    caption->add_option("--wav", wav_arg, "input WAV file")->required();
    caption->add_option("--temperature", temperature, "sampling temperature (0 = greedy)");
    caption->add_option("--max-len", max_len, "maximum tokens");
    caption->add_option("--seed", caption_seed, "sampling seed");

    auto* probe = app.add_subcommand("probe", "train an MLP probe on frozen embeddings");
    add_eval_common(probe, true);
    std::string preset = "aqa";
    int probe_epochs = 40;
    double probe_lr = 3e-3;
    uint64_t probe_seed = 0;
    probe->add_option("--preset", preset, "aqa (4-layer, audio+text) or hear (2-layer, audio only)");
    probe->add_option("--epochs", probe_epochs, "training epochs");
    probe->add_option("--lr", probe_lr, "probe learning rate");
    probe->add_option("--seed", probe_seed, "probe init seed");

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of every autodiff primitive");
    std::string mode = "float64";
    gradcheck_cmd->add_option("--mode", mode, "numeric mode (float64)");

    auto* plot = app.add_subcommand("plot", "render metrics CSVs as an SVG");
    std::string metrics_arg, column = "loss_total", split = "", labels_opt, svg_out;
    plot->add_option("--metrics", metrics_arg, "comma list of metrics CSVs")->required();
    plot->add_option("--column", column, "metrics column to plot");
    plot->add_option("--split", split, "restrict to a split (train|val)");
    plot->add_option("--labels", labels_opt, "comma list of legend labels");
    plot->add_option("--out", svg_out, "output SVG path")->required();

    std::vector<char*> argv_vec;
    std::vector<std::string> args_copy = args;
    argv_vec.push_back(const_cast<char*>("cacophony"));
    for (auto& a : args_copy) argv_vec.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv_vec.size()), argv_vec.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    auto parse_overrides = [](const std::vector<std::string>& pairs) {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& p : pairs) {
            const size_t eq = p.find('=');
            if (eq == std::string::npos) throw std::runtime_error("override must be key=value: " + p);
            out.emplace_back(p.substr(0, eq), p.substr(eq + 1));
        }
        return out;
    };

    if (synth->parsed()) {
        CorpusSpec spec;
        spec.seed = synth_seed;
        spec.n = synth_n;
        spec.dur_min = dur_min;
        spec.dur_max = dur_max;
        spec.max_events = max_events;
        spec.kinds.clear();
        for (const auto& name : split_list(kinds_arg)) spec.kinds.push_back(event_kind_from_name(name));
        const std::string out = synth_out.empty() ? default_out("corpus") : synth_out;
        SyntheticCorpus corpus = generate_corpus(spec, out);
        std::cout << "wrote " << corpus.items.size() << " clips to " << out << "\n";
        return 0;
    }
    if (train_mae->parsed()) {
        auto overrides = parse_overrides(mae_set);
        overrides.insert(overrides.end(), mae_overrides->begin(), mae_overrides->end());
        return run_train("mae", overrides, mae_config, mae_corpus);
    }
    if (train_clap->parsed()) {
        auto overrides = parse_overrides(clap_set);
        overrides.insert(overrides.end(), clap_overrides->begin(), clap_overrides->end());
        return run_train("clap", overrides, clap_config, clap_corpus);
    }
    if (gradcheck_cmd->parsed()) {
        if (mode != "float64") throw std::runtime_error("gradcheck supports only --mode float64");
        return run_gradcheck();
    }
    if (plot->parsed()) {
        plot_curves(split_list(metrics_arg), column, split, split_list(labels_opt), svg_out);
        std::cout << "wrote " << svg_out << "\n";
        return 0;
    }

    // remaining commands need a checkpoint bundle
    CheckpointBundle bundle = load_bundle(ckpt, vocab_path);
    ParamStore ps = params_from(bundle.ck);
    EvalConfig ecfg;
    ecfg.patch_budget = patch_budget;
    ecfg.seed = eval_seed;
    const fs::path reports = out_dir.empty() ? fs::path(default_out("reports")) : fs::path(out_dir);

    if (eval_ret->parsed()) {
        SyntheticCorpus corpus = corpus_from_arg(corpus_arg);
        EmbeddingBatch batch = embed_corpus(corpus, ps, bundle.model, bundle.vocab, ecfg);
        std::vector<int> ks;
        for (const auto& k : split_list(ks_arg)) ks.push_back(std::stoi(k));
        std::vector<int> ranks;
        auto [t2a, a2t] = retrieval_eval(batch, ks, &ranks);
        fs::create_directories(reports);
        json rep{{"text_to_audio", t2a.to_json()}, {"audio_to_text", a2t.to_json()}};
        std::ofstream((reports / "retrieval.json")) << rep.dump(2) << "\n";
        std::ofstream ranks_csv(reports / "retrieval_ranks.csv");
        ranks_csv << "direction,query,rank\n";
        const int n = batch.n();
        for (int i = 0; i < static_cast<int>(ranks.size()); ++i)
            ranks_csv << (i < n ? "text_to_audio" : "audio_to_text") << ',' << (i % n) << ',' << ranks[static_cast<size_t>(i)]
                      << "\n";
        std::cout << rep.dump(2) << "\n";
        return 0;
    }
    if (eval_zs->parsed()) {
        SyntheticCorpus corpus = corpus_from_arg(corpus_arg);
        EmbeddingBatch batch = embed_corpus(corpus, ps, bundle.model, bundle.vocab, ecfg);
        std::vector<std::string> labels = split_list(labels_arg);
        std::vector<int> truth;
        bool have_truth = true;
        for (const auto& item : corpus.items) {
            int idx = -1;
            if (!item.events.empty()) {
                const std::string want = zero_shot_label(item.events[0].kind);
                for (size_t l = 0; l < labels.size(); ++l)
                    if (labels[l] == want) idx = static_cast<int>(l);
            }
            have_truth = have_truth && idx >= 0;
            truth.push_back(idx);
        }
        ZeroShotResult res = zero_shot_classify(batch.audio, have_truth ? truth : std::vector<int>{}, labels,
                                                template_arg, ps, bundle.model, bundle.vocab);
        fs::create_directories(reports);
        json rep{{"labels", labels}, {"predicted", res.predicted}};
        if (have_truth) rep["accuracy"] = res.accuracy;
        std::ofstream(reports / "zeroshot.json") << rep.dump(2) << "\n";
        std::cout << rep.dump(2) << "\n";
        return 0;
    }
    if (eval_gap->parsed()) {
        SyntheticCorpus corpus = corpus_from_arg(corpus_arg);
        EmbeddingBatch batch = embed_corpus(corpus, ps, bundle.model, bundle.vocab, ecfg);
        GapReport rep = modality_gap(batch);
        fs::create_directories(reports);
        std::ofstream(reports / "gap.json") << rep.to_json().dump(2) << "\n";
        std::cout << rep.to_json().dump(2) << "\n";
        return 0;
    }
    if (caption->parsed()) {
        TokenSequence seq = generate_caption(load_wav(wav_arg), ps, bundle.model, temperature, max_len, caption_seed,
                                             patch_budget);
        std::cout << detokenize(seq, bundle.vocab) << "\n";
        return 0;
    }
    if (probe->parsed()) {
        SyntheticCorpus corpus = corpus_from_arg(corpus_arg);
        EmbeddingBatch batch = embed_corpus(corpus, ps, bundle.model, bundle.vocab, ecfg);
        std::vector<int> labels;
        int n_kinds = 0;
        for (const auto& item : corpus.items) {
            if (item.events.empty()) throw std::runtime_error("probe: corpus item without events");
            const int k = static_cast<int>(item.events[0].kind);
            labels.push_back(k);
            n_kinds = std::max(n_kinds, k + 1);
        }
        ProbeConfig pcfg;
        pcfg.epochs = probe_epochs;
        pcfg.lr = probe_lr;
        pcfg.seed = probe_seed;
        Tensor inputs;
        if (preset == "aqa") {
            pcfg.layers = 4;
            inputs = concat_cols({batch.audio, batch.text});
        } else if (preset == "hear") {
            pcfg.layers = 2;
            inputs = batch.audio;
        } else {
            throw std::runtime_error("probe: unknown preset " + preset);
        }
        const double acc = train_probe(inputs, labels, pcfg);
        fs::create_directories(reports);
        json rep{{"preset", preset}, {"accuracy", acc}, {"n_items", static_cast<int>(labels.size())}};
        std::ofstream(reports / "probe.json") << rep.dump(2) << "\n";
        std::cout << rep.dump(2) << "\n";
        return 0;
    }
    return 1;
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
    try {
        return dispatch(args);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

int cli_run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_run(args);
}

}  // namespace cacophony
