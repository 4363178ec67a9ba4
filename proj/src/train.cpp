#include "cacophony/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "cacophony/mel.hpp"
#include "cacophony/rng.hpp"
#include "cacophony/wav.hpp"

namespace cacophony {

const std::vector<std::string> kPromptTemplateWords = {"this", "is", "a", "sound", "of", "on"};

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
}

MaeMode mae_mode_from(const std::string& name) {
    if (name == "masked_only") return MaeMode::masked_only;
    if (name == "all") return MaeMode::all;
    throw std::invalid_argument("unknown mae_mode: " + name);
}

void append_row(std::vector<MetricsRow>& rows, std::ofstream& csv, const MetricsRow& row) {
    rows.push_back(row);
    csv << row.to_csv() << "\n";
    csv.flush();
}

struct Stage2ItemOut {
    Tensor audio_embed;  // [1 x d_embed]
    Tensor text_embed;
    Tensor logits;       // [L x V]
};

Stage2ItemOut stage2_item_forward(const BatchItem& item, ParamStore& ps, const ModelConfig& cfg) {
    Stage2ItemOut out;
    Tensor enc = audio_encode(item.grid, item.plan, ps, cfg);
    out.audio_embed = project_embed(attention_pool(enc, {}, ps, "audio_pool", cfg.pool_heads), ps, Side::audio);
    Tensor tenc = text_encode(item.tokens, ps, cfg);
    std::vector<uint8_t> key_valid(item.tokens.pad_mask.size());
    for (size_t i = 0; i < key_valid.size(); ++i) key_valid[i] = item.tokens.pad_mask[i] ? 0 : 1;
    out.text_embed = project_embed(attention_pool(tenc, key_valid, ps, "text_pool", cfg.pool_heads), ps, Side::text);
    out.logits = text_decode(item.tokens, enc, ps, cfg);
    return out;
}

struct Stage2Losses {
    Tensor total;
    LossBreakdown breakdown;
    double gap_norm = 0.0;
};

Stage2Losses stage2_batch_loss(const std::vector<BatchItem>& batch, ParamStore& ps, const ModelConfig& cfg,
                               double lambda_cap) {
    std::vector<Tensor> audio_rows, text_rows, cap_losses;
    for (const BatchItem& item : batch) {
        Stage2ItemOut out = stage2_item_forward(item, ps, cfg);
        audio_rows.push_back(out.audio_embed);
        text_rows.push_back(out.text_embed);
        cap_losses.push_back(captioning_nll_loss(out.logits, item.tokens));
    }
    Tensor audio = concat_rows(audio_rows);
    Tensor text = concat_rows(text_rows);
    Tensor inv_tau = cacophony::exp(ps.at("temperature.s"));
    Tensor contrastive = info_nce_loss(audio, text, inv_tau);

    Tensor cap_sum = cap_losses[0];
    for (size_t i = 1; i < cap_losses.size(); ++i) cap_sum = add(cap_sum, cap_losses[i]);
    Tensor cap_mean = scale(cap_sum, 1.0 / static_cast<double>(cap_losses.size()));

    Stage2Losses out;
    out.total = add(contrastive, scale(cap_mean, lambda_cap));
    out.breakdown.contrastive = contrastive.item();
    out.breakdown.captioning = cap_mean.item();
    out.breakdown.lambda_cap = lambda_cap;
    out.breakdown.total = out.total.item();

    const int n = audio.rows(), d = audio.cols();
    double sq = 0.0;
    for (int c = 0; c < d; ++c) {
        double ax = 0.0, tx = 0.0;
        for (int r = 0; r < n; ++r) {
            ax += audio.at(r, c);
            tx += text.at(r, c);
        }
        const double diff = (ax - tx) / n;
        sq += diff * diff;
    }
    out.gap_norm = std::sqrt(sq);
    return out;
}

// Fixed per-item plans/tokens for validation so val losses are comparable
// across steps.
std::vector<BatchItem> build_eval_items(const LoadedCorpus& data, const TrainConfig& cfg,
                                        const std::vector<int>& indices) {
    std::vector<BatchItem> items;
    for (int idx : indices) {
        BatchItem item;
        item.item_index = idx;
        MelFrames mel = mel_spectrogram(data.samples[static_cast<size_t>(idx)]);
        item.grid = patchify(mel);
        const uint64_t plan_seed = mix_seed(cfg.seed ^ 0xE7A1ULL, static_cast<uint64_t>(idx));
        if (cfg.stage == "mae") {
            item.plan = make_mask_plan(item.grid.n(), Stage::mae, 0, cfg.mask_ratio, plan_seed);
        } else {
            item.plan = make_mask_plan(item.grid.n(), Stage::clap, cfg.target_len, 0.0, plan_seed);
            item.tokens = tokenize(data.corpus->items[static_cast<size_t>(idx)].caption, data.vocab,
                                   cfg.model.max_text_len);
        }
        items.push_back(std::move(item));
    }
    return items;
}

void save_opt_state(const AdamWState& st, const ParamStore& params, int64_t step, const std::string& base,
                    const nlohmann::json& config) {
    ParamStore flat;
    for (size_t i = 0; i < params.count(); ++i) {
        const auto& e = params.entries()[i];
        flat.add("m." + e.name, Tensor::from(e.tensor.shape(), st.m[i]), false);
        flat.add("v." + e.name, Tensor::from(e.tensor.shape(), st.v[i]), false);
    }
    nlohmann::json cfg = config;
    cfg["opt_t"] = st.t;
    cfg["opt_step"] = step;
    save_checkpoint(flat, base, "opt", cfg);
}

void load_opt_state(AdamWState& st, const ParamStore& params, int64_t& step, const std::string& base) {
    LoadedCheckpoint ck = load_checkpoint(base);
    st.t = ck.config.at("opt_t").get<int64_t>();
    step = ck.config.at("opt_step").get<int64_t>();
    for (size_t i = 0; i < params.count(); ++i) {
        const auto& e = params.entries()[i];
        st.m[i] = ck.params.at("m." + e.name).data();
        st.v[i] = ck.params.at("v." + e.name).data();
    }
}

struct RunContext {
    std::filesystem::path out_dir;
    std::filesystem::path ckpt_dir;
    std::ofstream csv;
    std::vector<MetricsRow> rows;
};

RunContext open_run(const TrainConfig& cfg) {
    RunContext ctx;
    ctx.out_dir = cfg.out_dir.empty() ? std::filesystem::path("run") : std::filesystem::path(cfg.out_dir);
    ctx.ckpt_dir = ctx.out_dir / "checkpoints";
    std::filesystem::create_directories(ctx.ckpt_dir);
    std::ofstream cfg_echo(ctx.out_dir / "config.json");
    cfg_echo << cfg.to_json().dump(2) << "\n";
    ctx.csv.open(ctx.out_dir / "metrics.csv");
    ctx.csv << MetricsRow::csv_header() << "\n";
    return ctx;
}

void dump_state_on_error(const ParamStore& ps, int64_t step, const std::exception& ex) {
    std::cerr << "training aborted at step " << step << ": " << ex.what() << "\n";
    double norm = 0.0;
    for (const auto& e : ps.entries())
        for (double v : e.tensor.data()) norm += v * v;
    std::cerr << "parameter l2 norm: " << std::sqrt(norm) << "\n";
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"stage", stage},
                          {"model", model.to_json()},
                          {"batch_size", batch_size},
                          {"steps", steps},
                          {"sched",
                           {{"warmup_steps", sched.warmup_steps},
                            {"total_steps", sched.total_steps},
                            {"peak_lr", sched.peak_lr},
                            {"final_lr", sched.final_lr}}},
                          {"adamw",
                           {{"beta1", adamw.beta1},
                            {"beta2", adamw.beta2},
                            {"eps", adamw.eps},
                            {"weight_decay", adamw.weight_decay}}},
                          {"sam_rho", sam_rho},
                          {"lambda_cap", lambda_cap},
                          {"mask_ratio", mask_ratio},
                          {"mae_mode", mae_mode},
                          {"target_len", target_len},
                          {"crop_seconds", crop_seconds},
                          {"seed", seed},
                          {"eval_every", eval_every},
                          {"ckpt_every", ckpt_every},
                          {"init_checkpoint", init_checkpoint},
                          {"random_init", random_init},
                          {"resume_from", resume_from},
                          {"val_policy", val_policy},
                          {"out_dir", out_dir}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.stage = j.at("stage").get<std::string>();
    cfg.model = ModelConfig::from_json(j.at("model"));
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.steps = j.at("steps").get<int>();
    cfg.sched.warmup_steps = j.at("sched").at("warmup_steps").get<int>();
    cfg.sched.total_steps = j.at("sched").at("total_steps").get<int>();
    cfg.sched.peak_lr = j.at("sched").at("peak_lr").get<double>();
    cfg.sched.final_lr = j.at("sched").at("final_lr").get<double>();
    cfg.adamw.beta1 = j.at("adamw").at("beta1").get<double>();
    cfg.adamw.beta2 = j.at("adamw").at("beta2").get<double>();
    cfg.adamw.eps = j.at("adamw").at("eps").get<double>();
    cfg.adamw.weight_decay = j.at("adamw").at("weight_decay").get<double>();
    cfg.sam_rho = j.at("sam_rho").get<double>();
    cfg.lambda_cap = j.at("lambda_cap").get<double>();
    cfg.mask_ratio = j.at("mask_ratio").get<double>();
    cfg.mae_mode = j.at("mae_mode").get<std::string>();
    cfg.target_len = j.at("target_len").get<int>();
    cfg.crop_seconds = j.at("crop_seconds").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.eval_every = j.at("eval_every").get<int>();
    cfg.ckpt_every = j.at("ckpt_every").get<int>();
    cfg.init_checkpoint = j.at("init_checkpoint").get<std::string>();
    cfg.random_init = j.at("random_init").get<bool>();
    cfg.resume_from = j.at("resume_from").get<std::string>();
    cfg.val_policy = j.at("val_policy").get<std::string>();
    cfg.out_dir = j.at("out_dir").get<std::string>();
    return cfg;
}

TrainConfig TrainConfig::desk_mae() {
    TrainConfig cfg;
    cfg.stage = "mae";
    cfg.batch_size = 8;
    cfg.steps = 400;
    cfg.sched = {40, 400, 1e-3, 1e-5};
    cfg.mask_ratio = 0.8;
    cfg.crop_seconds = 2.0;
    return cfg;
}

TrainConfig TrainConfig::desk_clap() {
    TrainConfig cfg;
    cfg.stage = "clap";
    cfg.batch_size = 8;
    cfg.steps = 500;
    cfg.sched = {50, 500, 1e-3, 1e-5};
    cfg.sam_rho = 0.05;
    cfg.lambda_cap = 1.0;
    cfg.target_len = 128;
    return cfg;
}

nlohmann::json TrainConfig::reference_presets() {
    return nlohmann::json{
        {"stage1",
         {{"batch_size", 512}, {"peak_lr", 2e-4}, {"final_lr", 1e-6}, {"warmup_steps", 10000},
          {"total_steps", 200000}, {"weight_decay", 0.01}, {"mask_ratio", 0.8}, {"crop_seconds", 15.0},
          {"patch_seq_len", 750}}},
        {"stage2",
         {{"batch_size", 4096}, {"peak_lr", 1e-5}, {"final_lr", 1e-6}, {"warmup_steps", 10000},
          {"total_steps", 300000}, {"weight_decay", 0.01}, {"sam_rho", 0.075}, {"lambda_cap", 1.0},
          {"target_len", 512}, {"max_audio_seconds", 10.24}}}};
}

const char* MetricsRow::csv_header() {
    return "step,split,loss_total,loss_con,loss_cap,loss_mae,lr,tau,gap_norm,wall_ms";
}

std::string MetricsRow::to_csv() const {
    std::ostringstream os;
    os << step << ',' << split << ',' << fmt(loss_total) << ',' << fmt(loss_con) << ',' << fmt(loss_cap) << ','
       << fmt(loss_mae) << ',' << fmt(lr) << ',' << fmt(tau) << ',' << fmt(gap_norm) << ',' << fmt(wall_ms);
    return os.str();
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_metrics_csv: cannot open " + path);
    std::vector<MetricsRow> rows;
    std::string line;
    std::getline(f, line);
    if (line != MetricsRow::csv_header()) throw std::runtime_error("read_metrics_csv: unexpected header in " + path);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string field;
        MetricsRow row;
        std::getline(is, field, ',');
        row.step = std::stoll(field);
        std::getline(is, row.split, ',');
        auto next = [&]() {
            std::getline(is, field, ',');
            return std::stod(field);
        };
        row.loss_total = next();
        row.loss_con = next();
        row.loss_cap = next();
        row.loss_mae = next();
        row.lr = next();
        row.tau = next();
        row.gap_norm = next();
        row.wall_ms = next();
        rows.push_back(std::move(row));
    }
    return rows;
}

LoadedCorpus load_corpus(const SyntheticCorpus& corpus, const TrainConfig& cfg) {
    if (corpus.items.empty()) throw std::invalid_argument("load_corpus: empty corpus");
    LoadedCorpus data;
    data.corpus = &corpus;
    data.samples.reserve(corpus.items.size());
    for (const auto& item : corpus.items) data.samples.push_back(load_wav(item.wav_path));

    const int n = static_cast<int>(corpus.items.size());
    if (cfg.val_policy == "none") {
        for (int i = 0; i < n; ++i) data.train_idx.push_back(i);
    } else if (cfg.val_policy == "hash") {
        for (int i = 0; i < n; ++i) {
            if (mix_seed(cfg.seed ^ 0x7A11ULL, static_cast<uint64_t>(i)) % 8 == 0 && n >= 8)
                data.val_idx.push_back(i);
            else
                data.train_idx.push_back(i);
        }
    } else if (cfg.val_policy.rfind("tail:", 0) == 0) {
        const int k = std::stoi(cfg.val_policy.substr(5));
        if (k < 0 || k >= n) throw std::invalid_argument("load_corpus: bad tail split " + cfg.val_policy);
        for (int i = 0; i < n - k; ++i) data.train_idx.push_back(i);
        for (int i = n - k; i < n; ++i) data.val_idx.push_back(i);
    } else {
        throw std::invalid_argument("load_corpus: unknown val_policy " + cfg.val_policy);
    }
    if (data.train_idx.empty()) throw std::invalid_argument("load_corpus: empty train split");

    if (cfg.stage == "clap") {
        std::vector<std::string> captions;
        for (int i : data.train_idx) captions.push_back(corpus.items[static_cast<size_t>(i)].caption);
        data.vocab = build_vocab(captions, kPromptTemplateWords);
    }
    return data;
}

std::vector<BatchItem> build_batch(const LoadedCorpus& data, const TrainConfig& cfg, int64_t step) {
    Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(step)));
    const int train_n = static_cast<int>(data.train_idx.size());
    std::vector<int> order = data.train_idx;
    rng.shuffle(order);

    std::vector<BatchItem> batch;
    for (int slot = 0; slot < cfg.batch_size; ++slot) {
        const int idx = order[static_cast<size_t>(slot % train_n)];
        BatchItem item;
        item.item_index = idx;
        const auto& samples = data.samples[static_cast<size_t>(idx)];
        const uint64_t slot_seed = mix_seed(mix_seed(cfg.seed, static_cast<uint64_t>(step)), 1000 + slot);

        if (cfg.stage == "mae") {
            const int crop_len = static_cast<int>(cfg.crop_seconds * kSampleRate);
            std::vector<double> crop;
            if (static_cast<int>(samples.size()) > crop_len) {
                Rng crop_rng(mix_seed(slot_seed, 0xC209));
                const int start = crop_rng.uniform_int(static_cast<int>(samples.size()) - crop_len + 1);
                crop.assign(samples.begin() + start, samples.begin() + start + crop_len);
            } else {
                crop = samples;
            }
            item.grid = patchify(mel_spectrogram(crop));
            item.plan = make_mask_plan(item.grid.n(), Stage::mae, 0, cfg.mask_ratio, slot_seed);
        } else {
            item.grid = patchify(mel_spectrogram(samples));
            item.plan = make_mask_plan(item.grid.n(), Stage::clap, cfg.target_len, 0.0, slot_seed);
            item.tokens =
                tokenize(data.corpus->items[static_cast<size_t>(idx)].caption, data.vocab, cfg.model.max_text_len);
        }
        batch.push_back(std::move(item));
    }
    return batch;
}

TrainResult stage1_train(const TrainConfig& cfg, const SyntheticCorpus& corpus) {
    if (cfg.stage != "mae") throw std::invalid_argument("stage1_train: cfg.stage must be mae");
    const MaeMode mode = mae_mode_from(cfg.mae_mode);
    LoadedCorpus data = load_corpus(corpus, cfg);
    RunContext ctx = open_run(cfg);

    ParamStore ps;
    init_stage1_params(ps, cfg.model, cfg.seed);
    AdamWState opt = adamw_init(ps);
    int64_t start_step = 0;
    if (!cfg.resume_from.empty()) {
        LoadedCheckpoint ck = load_checkpoint(cfg.resume_from);
        for (const auto& e : ck.params.entries()) ps.at(e.name).data() = e.tensor.data();
        load_opt_state(opt, ps, start_step, cfg.resume_from + ".opt");
    }

    TrainResult result;
    result.metrics_path = (ctx.out_dir / "metrics.csv").string();
    const SAMConfig sam{cfg.sam_rho};
    std::vector<BatchItem> val_items = build_eval_items(data, cfg, data.val_idx);

    for (int64_t step = start_step; step < cfg.steps; ++step) {
        const auto t0 = Clock::now();
        const double lr = schedule_lr(step, cfg.sched);
        std::vector<BatchItem> batch = build_batch(data, cfg, step);

        double step_loss = 0.0;
        auto loss_fn = [&]() -> Tensor {
            Tensor sum_loss;
            for (const BatchItem& item : batch) {
                Tensor enc = audio_encode(item.grid, item.plan, ps, cfg.model);
                Tensor recon = mae_decode(enc, item.plan, ps, cfg.model);
                Tensor l = mae_mse_loss(recon, item.grid, item.plan, mode);
                sum_loss = sum_loss.defined() ? add(sum_loss, l) : l;
            }
            return scale(sum_loss, 1.0 / static_cast<double>(batch.size()));
        };

        try {
            StepResult sr = sam_step(loss_fn, ps, opt, cfg.adamw, lr, sam);
            step_loss = sr.loss;
            result.passes_per_step.push_back(sr.passes);
            result.forward_backward_count += sr.passes;
        } catch (const std::exception& ex) {
            dump_state_on_error(ps, step, ex);
            throw;
        }

        MetricsRow row;
        row.step = step;
        row.split = "train";
        row.loss_total = step_loss;
        row.loss_mae = step_loss;
        row.lr = lr;
        row.wall_ms = ms_since(t0);
        append_row(ctx.rows, ctx.csv, row);

        if (!val_items.empty() && cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            double val_loss = 0.0;
            for (const BatchItem& item : val_items) {
                Tensor enc = audio_encode(item.grid, item.plan, ps, cfg.model);
                Tensor recon = mae_decode(enc, item.plan, ps, cfg.model);
                val_loss += mae_mse(recon, item.grid, item.plan, mode);
            }
            MetricsRow vrow;
            vrow.step = step;
            vrow.split = "val";
            vrow.loss_total = val_loss / static_cast<double>(val_items.size());
            vrow.loss_mae = vrow.loss_total;
            vrow.lr = lr;
            vrow.wall_ms = 0.0;
            append_row(ctx.rows, ctx.csv, vrow);
        }

        if (cfg.ckpt_every > 0 && (step + 1) % cfg.ckpt_every == 0 && step + 1 < cfg.steps) {
            const std::string base = (ctx.ckpt_dir / ("step_" + std::to_string(step + 1))).string();
            save_checkpoint(ps, base, "mae", cfg.to_json());
            save_opt_state(opt, ps, step + 1, base + ".opt", cfg.to_json());
        }
    }

    result.checkpoint_base = (ctx.ckpt_dir / "final").string();
    save_checkpoint(ps, result.checkpoint_base, "mae", cfg.to_json());
    save_opt_state(opt, ps, cfg.steps, result.checkpoint_base + ".opt", cfg.to_json());
    result.encoder_base = (ctx.ckpt_dir / "final_encoder").string();
    save_checkpoint(ps, result.encoder_base, "mae", cfg.to_json(), is_encoder_param);
    result.metrics = ctx.rows;
    return result;
}

TrainResult stage2_train(const TrainConfig& cfg, const SyntheticCorpus& corpus) {
    if (cfg.stage != "clap") throw std::invalid_argument("stage2_train: cfg.stage must be clap");
    if (cfg.init_checkpoint.empty() && !cfg.random_init)
        throw std::invalid_argument("stage2_train: need init_checkpoint or explicit random_init");
    LoadedCorpus data = load_corpus(corpus, cfg);

    TrainConfig resolved = cfg;
    resolved.model.vocab_size = data.vocab.size();
    RunContext ctx = open_run(resolved);
    data.vocab.save((ctx.out_dir / "vocab.txt").string());

    ParamStore ps;
    init_stage2_params(ps, resolved.model, resolved.seed);
    if (!resolved.init_checkpoint.empty())
        load_encoder_params(ps, load_checkpoint(resolved.init_checkpoint), resolved.model);
    AdamWState opt = adamw_init(ps);
    int64_t start_step = 0;
    if (!resolved.resume_from.empty()) {
        LoadedCheckpoint ck = load_checkpoint(resolved.resume_from);
        for (const auto& e : ck.params.entries()) ps.at(e.name).data() = e.tensor.data();
        load_opt_state(opt, ps, start_step, resolved.resume_from + ".opt");
    }

    TrainResult result;
    result.metrics_path = (ctx.out_dir / "metrics.csv").string();
    const SAMConfig sam{resolved.sam_rho};
    std::vector<BatchItem> val_items = build_eval_items(data, resolved, data.val_idx);

    for (int64_t step = start_step; step < resolved.steps; ++step) {
        const auto t0 = Clock::now();
        const double lr = schedule_lr(step, resolved.sched);
        std::vector<BatchItem> batch = build_batch(data, resolved, step);

        std::vector<Stage2Losses> pass_losses;
        auto loss_fn = [&]() -> Tensor {
            Stage2Losses losses = stage2_batch_loss(batch, ps, resolved.model, resolved.lambda_cap);
            Tensor total = losses.total;
            pass_losses.push_back(std::move(losses));
            return total;
        };

        StepResult sr;
        try {
            sr = sam_step(loss_fn, ps, opt, resolved.adamw, lr, sam);
        } catch (const std::exception& ex) {
            dump_state_on_error(ps, step, ex);
            throw;
        }
        temperature_update_clamp(ps);
        result.passes_per_step.push_back(sr.passes);
        result.forward_backward_count += sr.passes;

        const Stage2Losses& first = pass_losses.front();
        MetricsRow row;
        row.step = step;
        row.split = "train";
        row.loss_total = first.breakdown.total;
        row.loss_con = first.breakdown.contrastive;
        row.loss_cap = first.breakdown.captioning;
        row.lr = lr;
        row.tau = temperature_tau(ps);
        row.gap_norm = first.gap_norm;
        row.wall_ms = ms_since(t0);
        append_row(ctx.rows, ctx.csv, row);

        if (!val_items.empty() && resolved.eval_every > 0 && (step + 1) % resolved.eval_every == 0) {
            Stage2Losses val = stage2_batch_loss(val_items, ps, resolved.model, resolved.lambda_cap);
            MetricsRow vrow;
            vrow.step = step;
            vrow.split = "val";
            vrow.loss_total = val.breakdown.total;
            vrow.loss_con = val.breakdown.contrastive;
            vrow.loss_cap = val.breakdown.captioning;
            vrow.lr = lr;
            vrow.tau = temperature_tau(ps);
            vrow.gap_norm = val.gap_norm;
            vrow.wall_ms = 0.0;
            append_row(ctx.rows, ctx.csv, vrow);
        }

        if (resolved.ckpt_every > 0 && (step + 1) % resolved.ckpt_every == 0 && step + 1 < resolved.steps) {
            const std::string base = (ctx.ckpt_dir / ("step_" + std::to_string(step + 1))).string();
            save_checkpoint(ps, base, "clap", resolved.to_json());
            save_opt_state(opt, ps, step + 1, base + ".opt", resolved.to_json());
        }
    }

    result.checkpoint_base = (ctx.ckpt_dir / "final").string();
    save_checkpoint(ps, result.checkpoint_base, "clap", resolved.to_json());
    save_opt_state(opt, ps, resolved.steps, result.checkpoint_base + ".opt", resolved.to_json());
    result.metrics = ctx.rows;
    return result;
}

}  // namespace cacophony
