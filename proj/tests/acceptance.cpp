// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line. Run via `ctest -R acceptance` or ./acceptance_tests directly.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "cacophony/eval.hpp"
#include "cacophony/gradcheck.hpp"
#include "cacophony/mel.hpp"
#include "cacophony/rng.hpp"
#include "cacophony/train.hpp"
#include "cacophony/wav.hpp"

using namespace cacophony;

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct CriterionReport {
    int number;
    const char* summary;
    Clock::time_point start = Clock::now();
    bool passed = false;

    CriterionReport(int n, const char* s) : number(n), summary(s) {
        std::printf("[criterion %2d] %s ...\n", n, s);
        std::fflush(stdout);
    }
    void pass() { passed = true; }
    ~CriterionReport() {
        const double secs = std::chrono::duration<double>(Clock::now() - start).count();
        std::printf("[%s] criterion %2d (%s) in %.1fs\n", passed ? "PASS" : "FAIL", number, summary, secs);
        std::fflush(stdout);
    }
};

std::string work_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "cacophony_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

Tensor random_tensor(Rng& rng, const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.gaussian();
    return Tensor::from(shape, std::move(v));
}

Tensor weighted_sum(const Tensor& t, uint64_t seed) {
    Rng rng(seed);
    Tensor w = random_tensor(rng, {1, t.rows()});
    Tensor v = random_tensor(rng, {t.cols(), 1});
    return sum(matmul(matmul(w, t), v));
}

// Small model shared by criteria 6, 7 and 10.
ModelConfig small_model() {
    ModelConfig cfg;
    cfg.audio_enc = {2, 4, 32, 64};
    cfg.mae_dec = {1, 4, 32, 64};
    cfg.text_enc = {2, 4, 32, 64};
    cfg.text_dec_depth = 1;
    cfg.pool_heads = 2;
    cfg.d_embed = 16;
    return cfg;
}

TrainConfig small_stage2_config(uint64_t seed, double rho, const std::string& out_dir) {
    TrainConfig cfg;
    cfg.stage = "clap";
    cfg.model = small_model();
    cfg.batch_size = 16;
    cfg.steps = 250;
    cfg.sched = {25, 250, 1e-3, 1e-5};
    cfg.sam_rho = rho;
    cfg.target_len = 48;
    cfg.seed = seed;
    cfg.eval_every = 10;
    cfg.val_policy = "tail:16";
    cfg.out_dir = out_dir;
    return cfg;
}

struct PairedRuns {
    // per seed: {argmin_val_step, final_val, metrics}
    struct Run {
        int argmin_step = -1;
        double best_val = 0.0;
        double final_val = 0.0;
        std::vector<MetricsRow> metrics;
    };
    std::vector<Run> baseline;  // rho = 0 (also the random-init arm of criterion 7)
    std::vector<Run> sam;       // rho = 0.05
    bool ready = false;
};

PairedRuns g_paired;         // filled by criterion 6, reused by 7 and 10
SyntheticCorpus g_corpus80;  // 64 train / 16 val corpus

PairedRuns::Run summarize(const TrainResult& res) {
    PairedRuns::Run run;
    run.metrics = res.metrics;
    run.best_val = 1e300;
    for (const auto& row : res.metrics) {
        if (row.split != "val") continue;
        if (row.loss_total < run.best_val) {
            run.best_val = row.loss_total;
            run.argmin_step = static_cast<int>(row.step);
        }
        run.final_val = row.loss_total;
    }
    return run;
}

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[1];
}

// first step whose 5-step moving average of train loss drops below thr
int steps_to_threshold(const std::vector<MetricsRow>& rows, double thr) {
    std::vector<double> train;
    std::vector<int> steps;
    for (const auto& row : rows)
        if (row.split == "train") {
            train.push_back(row.loss_total);
            steps.push_back(static_cast<int>(row.step));
        }
    for (size_t i = 0; i < train.size(); ++i) {
        double s = 0.0;
        int c = 0;
        for (size_t j = i >= 4 ? i - 4 : 0; j <= i; ++j) {
            s += train[j];
            ++c;
        }
        if (s / c < thr) return steps[i];
    }
    return -1;
}

}  // namespace

TEST_CASE("criterion 1: gradient fidelity") {
    CriterionReport report(1, "finite-difference fidelity of primitives and the stage-2 loss");
    PrecisionScope f64(Precision::f64);

    // primitives at 10 random points each, < 1e-4
    Rng aux(99);
    Tensor other = random_tensor(aux, {4, 5});
    Tensor rhs = random_tensor(aux, {5, 3});
    Tensor gain = random_tensor(aux, {5});
    Tensor bias = random_tensor(aux, {5});
    std::vector<int> gather_idx = {2, 0, 2, 3};
    std::vector<int> targets = {1, 4, 0, 2};
    const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases = {
        {"add", [&](const Tensor& x) { return weighted_sum(add(x, other), 1); }},
        {"mul", [&](const Tensor& x) { return weighted_sum(mul(x, other), 2); }},
        {"scale", [&](const Tensor& x) { return weighted_sum(scale(x, -1.7), 3); }},
        {"add_rowvec", [&](const Tensor& x) { return weighted_sum(add_rowvec(x, gain), 4); }},
        {"matmul", [&](const Tensor& x) { return weighted_sum(matmul(x, rhs), 5); }},
        {"transpose", [&](const Tensor& x) { return weighted_sum(transpose(x), 6); }},
        {"softmax", [&](const Tensor& x) { return weighted_sum(softmax(x), 7); }},
        {"layer_norm", [&](const Tensor& x) { return weighted_sum(layer_norm(x, gain, bias), 8); }},
        {"silu", [&](const Tensor& x) { return weighted_sum(silu(x), 9); }},
        {"sigmoid", [&](const Tensor& x) { return weighted_sum(sigmoid(x), 10); }},
        {"exp", [&](const Tensor& x) { return weighted_sum(cacophony::exp(scale(x, 0.3)), 11); }},
        {"log", [&](const Tensor& x) {
             return weighted_sum(cacophony::log(add(mul(x, x), Tensor::full({4, 5}, 1.5))), 12);
         }},
        {"sum", [&](const Tensor& x) { return sum(x); }},
        {"mean", [&](const Tensor& x) { return mean(x); }},
        {"concat_rows", [&](const Tensor& x) { return weighted_sum(concat_rows({x, other}), 13); }},
        {"concat_cols", [&](const Tensor& x) { return weighted_sum(concat_cols({x, other}), 14); }},
        {"slice", [&](const Tensor& x) { return weighted_sum(slice_cols(slice_rows(x, 1, 3), 0, 4), 15); }},
        {"gather_rows", [&](const Tensor& x) { return weighted_sum(gather_rows(x, gather_idx), 16); }},
        {"embedding_lookup", [&](const Tensor& x) { return weighted_sum(embedding_lookup(x, gather_idx), 17); }},
        {"l2_normalize", [&](const Tensor& x) { return weighted_sum(l2_normalize(add(x, Tensor::full({4, 5}, 2.0))), 18); }},
        {"cross_entropy", [&](const Tensor& x) { return cross_entropy_from_logits(x, targets); }},
        {"mul_scalar", [&](const Tensor& x) { return weighted_sum(mul_scalar(x, slice_cols(slice_rows(x, 0, 1), 0, 1)), 19); }},
    };
    for (const auto& [name, fn] : cases) {
        double worst = 0.0;
        for (uint64_t seed = 0; seed < 10; ++seed) {
            Rng rng(mix_seed(4321, seed));
            worst = std::max(worst, grad_check(fn, random_tensor(rng, {4, 5})));
        }
        INFO("primitive ", name);
        REQUIRE(worst < 1e-4);
    }

    // full stage-2 combined loss on a 2-pair micro batch, every parameter
    // coordinate, 10 seeds, < 1e-3
    double worst_e2e = 0.0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        ModelConfig cfg = ModelConfig::micro();
        cfg.vocab_size = 11;
        ParamStore ps;
        init_stage2_params(ps, cfg, mix_seed(55, seed));

        Rng rng(mix_seed(77, seed));
        std::vector<BatchItem> batch;
        for (int i = 0; i < 2; ++i) {
            BatchItem item;
            MelFrames mel;
            mel.n_frames = 16;
            mel.v.resize(static_cast<size_t>(16) * kMelBands);
            for (double& v : mel.v) v = rng.gaussian();
            item.grid = patchify(mel);  // 8 patches
            item.plan = make_mask_plan(item.grid.n(), Stage::clap, 10, 0.0, seed);  // adds 2 pad slots
            item.tokens.ids = {Vocab::BOS, 4 + i, 5, 7 + i, Vocab::EOS};
            item.tokens.pad_mask.assign(5, 0);
            batch.push_back(std::move(item));
        }

        auto loss_fn = [&]() -> Tensor {
            std::vector<Tensor> audio_rows, text_rows, caps;
            for (const auto& item : batch) {
                Tensor enc = audio_encode(item.grid, item.plan, ps, cfg);
                audio_rows.push_back(
                    project_embed(attention_pool(enc, {}, ps, "audio_pool", cfg.pool_heads), ps, Side::audio));
                Tensor tenc = text_encode(item.tokens, ps, cfg);
                text_rows.push_back(
                    project_embed(attention_pool(tenc, {}, ps, "text_pool", cfg.pool_heads), ps, Side::text));
                caps.push_back(captioning_nll_loss(text_decode(item.tokens, enc, ps, cfg), item.tokens));
            }
            Tensor con = info_nce_loss(concat_rows(audio_rows), concat_rows(text_rows),
                                       cacophony::exp(ps.at("temperature.s")));
            Tensor cap = scale(add(caps[0], caps[1]), 0.5);
            return add(con, cap);  // lambda_cap = 1
        };
        worst_e2e = std::max(worst_e2e, grad_check_params(loss_fn, ps, {1e-5, 1e-4, 1e-3, 3e-4, 1e-6}));
    }
    std::printf("    end-to-end max relative error: %.3e\n", worst_e2e);
    REQUIRE(worst_e2e < 1e-3);
    report.pass();
}

TEST_CASE("criterion 2: SAM algebra") {
    CriterionReport report(2, "perturbation norm, quadratic second pass, rho=0 degeneracy, pass count");
    PrecisionScope f64(Precision::f64);

    // ||eps_hat|| = rho within 1e-12 for nonzero gradients
    Rng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        ParamStore ps;
        Tensor& w = ps.add("w", random_tensor(rng, {3, 2}), false);
        auto& g = w.grad();
        for (double& v : g) v = rng.gaussian();
        const double rho = rng.uniform(0.01, 2.0);
        auto eps = sam_perturb(ps, rho);
        double sq = 0.0;
        for (double v : eps[0]) sq += v * v;
        REQUIRE(std::abs(std::sqrt(sq) - rho) < 1e-12);
    }

    // L = 0.5||w||^2 at w=(3,4), rho=0.075: second-pass gradient (3.045, 4.060)
    auto quadratic = [](ParamStore& ps) { return scale(sum(mul(ps.at("w"), ps.at("w"))), 0.5); };
    {
        ParamStore ps;
        ps.add("w", Tensor::from({2}, {3.0, 4.0}, true), false);
        AdamWState st = adamw_init(ps);
        AdamWConfig acfg;
        acfg.weight_decay = 0.0;
        StepResult res = sam_step([&] { return quadratic(ps); }, ps, st, acfg, 0.0, {0.075});
        REQUIRE(res.passes == 2);
        REQUIRE(std::abs(ps.at("w").grad()[0] - 3.045) < 1e-9);
        REQUIRE(std::abs(ps.at("w").grad()[1] - 4.060) < 1e-9);
    }

    // rho = 0 sam_step is bitwise adamw_apply, one pass
    {
        ParamStore a, b;
        a.add("w", Tensor::from({2}, {3.0, 4.0}, true), true);
        b.add("w", Tensor::from({2}, {3.0, 4.0}, true), true);
        AdamWState sa = adamw_init(a), sb = adamw_init(b);
        StepResult res = sam_step([&] { return quadratic(a); }, a, sa, AdamWConfig{}, 0.05, {0.0});
        REQUIRE(res.passes == 1);
        b.zero_grad();
        backward(quadratic(b));
        adamw_apply(b, sb, AdamWConfig{}, 0.05);
        REQUIRE(a.at("w").at(0) == b.at("w").at(0));
        REQUIRE(a.at("w").at(1) == b.at("w").at(1));
        REQUIRE(sa.m[0][0] == sb.m[0][0]);
        REQUIRE(sa.v[0][0] == sb.v[0][0]);
    }

    // instrumented pass count is exactly 2 per step when rho > 0
    {
        ParamStore ps;
        ps.add("w", Tensor::from({2}, {1.0, -2.0}, true), false);
        AdamWState st = adamw_init(ps);
        AdamWConfig acfg;
        acfg.weight_decay = 0.0;
        for (int step = 0; step < 5; ++step) {
            StepResult res = sam_step([&] { return quadratic(ps); }, ps, st, acfg, 0.01, {0.1});
            REQUIRE(res.passes == 2);
        }
    }
    report.pass();
}

TEST_CASE("criterion 3: closed-form losses") {
    CriterionReport report(3, "InfoNCE and captioning NLL closed forms");
    PrecisionScope f64(Precision::f64);

    std::vector<std::vector<double>> same(4, {0.6, 0.8, 0.0});
    std::vector<double> flat;
    for (const auto& r : same)
        for (double v : r) flat.push_back(v);
    Tensor four = Tensor::from({4, 3}, flat);
    const double all_equal = info_nce({four, four}, 0.37);
    REQUIRE(std::abs(all_equal - 2.0 * std::log(4.0)) < 1e-6);
    REQUIRE(std::abs(all_equal - 2.772589) < 1e-6);

    Tensor ortho = Tensor::from({2, 2}, {1, 0, 0, 1});
    const double two_pair = info_nce({ortho, ortho}, 1.0);
    REQUIRE(std::abs(two_pair - 2.0 * std::log(1.0 + std::exp(-1.0))) < 1e-6);
    REQUIRE(std::abs(two_pair - 0.626524) < 1e-6);

    TokenSequence seq;
    seq.ids = {Vocab::BOS, 5, 9, Vocab::EOS};
    seq.pad_mask.assign(4, 0);
    const double uniform_nll = captioning_nll(Tensor::zeros({3, 16}), seq);
    REQUIRE(std::abs(uniform_nll - std::log(16.0)) < 1e-6);
    REQUIRE(std::abs(uniform_nll - 2.772589) < 1e-6);
    report.pass();
}

TEST_CASE("criterion 4: patch arithmetic") {
    CriterionReport report(4, "10.24 s -> 1024 frames -> 512 patches; mask keeps 102 of 512");
    MelFrames mel = mel_spectrogram(std::vector<double>(163840, 0.0));  // 10.24 s at 16 kHz
    REQUIRE(mel.n_frames == 1024);
    PatchGrid grid = patchify(mel);
    REQUIRE(grid.n() == 512);
    REQUIRE(grid.t_patches == 64);
    REQUIRE(grid.f_patches == 8);
    MaskPlan plan = make_mask_plan(512, Stage::mae, 0, 0.8, 123);
    REQUIRE(plan.kept.size() == 102);
    report.pass();
}

TEST_CASE("criterion 5: stage-2 memorization on the desk model") {
    CriterionReport report(5, "8 pairs -> R@1 100% both ways, NLL < 0.1, exact greedy captions");
    CorpusSpec spec;
    spec.seed = 3;
    spec.n = 8;
    spec.dur_min = 0.4;
    spec.dur_max = 0.9;
    SyntheticCorpus corpus = generate_corpus(spec, work_dir("c5_corpus"));
    {
        std::set<std::string> caps;
        for (const auto& item : corpus.items) caps.insert(item.caption);
        REQUIRE(caps.size() == corpus.items.size());  // captions must be distinct
    }

    TrainConfig cfg;
    cfg.stage = "clap";
    cfg.model = ModelConfig::desk();  // 4 layers, d=128
    cfg.batch_size = 8;
    cfg.steps = 300;  // criterion allows up to 500
    cfg.sched = {30, 300, 1e-3, 1e-5};
    cfg.sam_rho = 0.0;
    cfg.target_len = 64;
    cfg.seed = 1;
    cfg.eval_every = 0;
    cfg.val_policy = "none";
    cfg.random_init = true;
    cfg.out_dir = work_dir("c5_run");
    TrainResult res = stage2_train(cfg, corpus);
    REQUIRE(res.metrics.back().loss_cap < 0.1);

    LoadedCheckpoint ck = load_checkpoint(res.checkpoint_base);
    ParamStore ps;
    for (const auto& e : ck.params.entries()) ps.add(e.name, e.tensor, e.decay);
    ModelConfig mc = ModelConfig::from_json(ck.config.at("model"));
    Vocab vocab = Vocab::load(cfg.out_dir + "/vocab.txt");

    EmbeddingBatch batch = embed_corpus(corpus, ps, mc, vocab, EvalConfig{});
    auto [t2a, a2t] = retrieval_eval(batch, {1});
    std::printf("    train R@1: text-to-audio %.1f, audio-to-text %.1f; final cap NLL %.4f\n", t2a.recall[0],
                a2t.recall[0], res.metrics.back().loss_cap);
    REQUIRE(t2a.recall[0] == 100.0);
    REQUIRE(a2t.recall[0] == 100.0);

    for (const auto& item : corpus.items) {
        TokenSequence seq = generate_caption(load_wav(item.wav_path), ps, mc, 0.0, 24, 0);
        REQUIRE(detokenize(seq, vocab) == item.caption);
    }
    report.pass();
}

TEST_CASE("criterion 6: SAM delays and improves validation loss") {
    CriterionReport report(6, "rho=0 val minimum earlier and final val >= rho=0.05, median of 3 seeds");
    CorpusSpec spec;
    spec.seed = 60;
    spec.n = 80;  // 64 train / 16 val via tail split
    spec.dur_min = 0.4;
    spec.dur_max = 0.8;
    g_corpus80 = generate_corpus(spec, work_dir("c6_corpus"));

    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        TrainConfig base = small_stage2_config(seed, 0.0, work_dir("c6_rho0_s" + std::to_string(seed)));
        base.random_init = true;
        g_paired.baseline.push_back(summarize(stage2_train(base, g_corpus80)));

        TrainConfig sam = small_stage2_config(seed, 0.05, work_dir("c6_sam_s" + std::to_string(seed)));
        sam.random_init = true;
        g_paired.sam.push_back(summarize(stage2_train(sam, g_corpus80)));
    }
    g_paired.ready = true;

    std::vector<double> argmin0, argmin_sam, final0, final_sam;
    for (int i = 0; i < 3; ++i) {
        argmin0.push_back(g_paired.baseline[static_cast<size_t>(i)].argmin_step);
        argmin_sam.push_back(g_paired.sam[static_cast<size_t>(i)].argmin_step);
        final0.push_back(g_paired.baseline[static_cast<size_t>(i)].final_val);
        final_sam.push_back(g_paired.sam[static_cast<size_t>(i)].final_val);
        std::printf("    seed %d: rho=0 val min %.3f@%d final %.3f | rho=0.05 val min %.3f@%d final %.3f\n", i + 1,
                    g_paired.baseline[static_cast<size_t>(i)].best_val,
                    g_paired.baseline[static_cast<size_t>(i)].argmin_step,
                    g_paired.baseline[static_cast<size_t>(i)].final_val,
                    g_paired.sam[static_cast<size_t>(i)].best_val, g_paired.sam[static_cast<size_t>(i)].argmin_step,
                    g_paired.sam[static_cast<size_t>(i)].final_val);
    }
    REQUIRE(median3(argmin0) < median3(argmin_sam));
    REQUIRE(median3(final0) >= median3(final_sam));
    report.pass();
}

TEST_CASE("criterion 7: stage-1 pretraining reaches the loss threshold faster") {
    CriterionReport report(7, "MAE init beats random init to a fixed train-loss threshold, median of 3 seeds");
    REQUIRE(g_paired.ready);  // random-init arm shared with criterion 6

    // audio-only corpus for pretraining, larger than the pair corpus
    CorpusSpec mae_spec;
    mae_spec.seed = 61;
    mae_spec.n = 200;
    mae_spec.dur_min = 0.4;
    mae_spec.dur_max = 0.8;
    SyntheticCorpus mae_corpus = generate_corpus(mae_spec, work_dir("c7_audio"));

    TrainConfig s1;
    s1.stage = "mae";
    s1.model = small_model();
    s1.batch_size = 8;
    s1.steps = 1000;
    s1.sched = {100, 1000, 2e-3, 1e-4};
    s1.crop_seconds = 0.8;
    s1.seed = 100;
    s1.eval_every = 0;
    s1.val_policy = "none";
    s1.out_dir = work_dir("c7_mae");
    TrainResult mae = stage1_train(s1, mae_corpus);
    std::printf("    stage-1 final reconstruction MSE: %.4f\n", mae.metrics.back().loss_mae);

    const double threshold = 4.0;
    std::vector<double> steps_pre, steps_rand;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        TrainConfig cfg = small_stage2_config(seed, 0.0, work_dir("c7_pre_s" + std::to_string(seed)));
        cfg.init_checkpoint = mae.encoder_base;
        TrainResult res = stage2_train(cfg, g_corpus80);
        const int pre = steps_to_threshold(res.metrics, threshold);
        const int rnd = steps_to_threshold(g_paired.baseline[static_cast<size_t>(seed - 1)].metrics, threshold);
        std::printf("    seed %llu: steps to %.1f pretrained=%d random=%d\n",
                    static_cast<unsigned long long>(seed), threshold, pre, rnd);
        REQUIRE(pre >= 0);
        REQUIRE(rnd >= 0);
        steps_pre.push_back(pre);
        steps_rand.push_back(rnd);
    }
    REQUIRE(median3(steps_pre) < median3(steps_rand));
    report.pass();
}

TEST_CASE("criterion 8: retrieval oracle equivalence") {
    CriterionReport report(8, "retrieval matches the brute-force ranking oracle on 50 random 100-pair batches");
    Rng rng(88);
    auto random_unit = [&](int n, int d) {
        std::vector<double> flat;
        for (int r = 0; r < n; ++r) {
            std::vector<double> row(static_cast<size_t>(d));
            double sq = 0.0;
            for (double& v : row) {
                v = rng.gaussian();
                sq += v * v;
            }
            for (double v : row) flat.push_back(v / std::sqrt(sq));
        }
        return Tensor::from({n, d}, std::move(flat));
    };
    auto oracle_rank = [](const Tensor& queries, const Tensor& candidates, int q) {
        const int n = candidates.rows(), d = candidates.cols();
        std::vector<double> sims(static_cast<size_t>(n));
        for (int c = 0; c < n; ++c) {
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += queries.at(q, j) * candidates.at(c, j);
            sims[static_cast<size_t>(c)] = dot;
        }
        int rank = 1;
        for (int c = 0; c < n; ++c) {
            if (sims[static_cast<size_t>(c)] > sims[static_cast<size_t>(q)]) ++rank;
            if (c < q && sims[static_cast<size_t>(c)] == sims[static_cast<size_t>(q)]) ++rank;
        }
        return rank;
    };

    for (int trial = 0; trial < 50; ++trial) {
        const int n = 100;
        EmbeddingBatch batch{random_unit(n, 12), random_unit(n, 12)};
        auto [t2a, a2t] = retrieval_eval(batch, {1, 5, 10});
        for (size_t i = 0; i < t2a.ks.size(); ++i) {
            int hits_t2a = 0, hits_a2t = 0;
            for (int q = 0; q < n; ++q) {
                hits_t2a += oracle_rank(batch.text, batch.audio, q) <= t2a.ks[i] ? 1 : 0;
                hits_a2t += oracle_rank(batch.audio, batch.text, q) <= t2a.ks[i] ? 1 : 0;
            }
            REQUIRE(t2a.recall[i] == 100.0 * hits_t2a / n);
            REQUIRE(a2t.recall[i] == 100.0 * hits_a2t / n);
        }
    }
    report.pass();
}

TEST_CASE("criterion 9: structural invariants") {
    CriterionReport report(9, "causality, pooler invariances, checkpoint round trip, run determinism");
    ModelConfig cfg = small_model();
    cfg.vocab_size = 14;
    ParamStore ps;
    init_stage2_params(ps, cfg, 7);

    // causality at 1e-6 over 20 trials, encoder and decoder
    MelFrames mel;
    mel.n_frames = 16;
    mel.v.resize(static_cast<size_t>(16) * kMelBands);
    Rng rng(909);
    for (double& v : mel.v) v = rng.gaussian();
    PatchGrid grid = patchify(mel);
    MaskPlan plan;
    plan.n_real = grid.n();
    for (int i = 0; i < grid.n(); ++i) plan.kept.push_back(i);
    Tensor mem = audio_encode(grid, plan, ps, cfg);

    for (int trial = 0; trial < 20; ++trial) {
        const int len = 4 + rng.uniform_int(8);
        std::vector<int> ids(static_cast<size_t>(len));
        ids[0] = Vocab::BOS;
        for (int k = 1; k < len; ++k) ids[static_cast<size_t>(k)] = 4 + rng.uniform_int(cfg.vocab_size - 4);
        const int j = 1 + rng.uniform_int(len - 1);
        std::vector<int> changed = ids;
        changed[static_cast<size_t>(j)] = 4 + (changed[static_cast<size_t>(j)] - 3) % (cfg.vocab_size - 4);

        TokenSequence a, b;
        a.ids = ids;
        a.pad_mask.assign(ids.size(), 0);
        b.ids = changed;
        b.pad_mask.assign(changed.size(), 0);

        Tensor ea = text_encode(a, ps, cfg), eb = text_encode(b, ps, cfg);
        Tensor da = text_decode(a, mem, ps, cfg), db = text_decode(b, mem, ps, cfg);
        for (int i = 0; i < j; ++i) {
            for (int c = 0; c < cfg.text_enc.d_model; ++c) REQUIRE(std::abs(ea.at(i, c) - eb.at(i, c)) < 1e-6);
            for (int c = 0; c < cfg.vocab_size; ++c) REQUIRE(std::abs(da.at(i, c) - db.at(i, c)) < 1e-6);
        }
    }

    // pooler permutation and pad invariance at 1e-6
    {
        Tensor seq = random_tensor(rng, {6, cfg.audio_enc.d_model});
        Tensor pooled = attention_pool(seq, {}, ps, "audio_pool", cfg.pool_heads);
        std::vector<int> perm = {5, 2, 0, 4, 1, 3};
        Tensor permuted = attention_pool(gather_rows(seq, perm), {}, ps, "audio_pool", cfg.pool_heads);
        Tensor padded_seq = concat_rows({seq, Tensor::zeros({2, cfg.audio_enc.d_model})});
        std::vector<uint8_t> key_valid = {1, 1, 1, 1, 1, 1, 0, 0};
        Tensor padded = attention_pool(padded_seq, key_valid, ps, "audio_pool", cfg.pool_heads);
        for (int c = 0; c < cfg.audio_enc.d_model; ++c) {
            REQUIRE(std::abs(pooled.at(0, c) - permuted.at(0, c)) < 1e-6);
            REQUIRE(std::abs(pooled.at(0, c) - padded.at(0, c)) < 1e-6);
        }
    }

    // checkpoint save -> load bitwise round trip
    {
        const std::string base = work_dir("c9_ckpt") + "/params";
        save_checkpoint(ps, base, "clap", cfg.to_json());
        LoadedCheckpoint ck = load_checkpoint(base);
        REQUIRE(ck.params.count() == ps.count());
        for (const auto& e : ps.entries()) {
            const Tensor& loaded = ck.params.at(e.name);
            for (int64_t i = 0; i < e.tensor.size(); ++i) REQUIRE(loaded.at(i) == e.tensor.at(i));
        }
    }

    // full-run determinism: two runs, identical metrics CSV minus wall_ms
    {
        CorpusSpec spec;
        spec.seed = 90;
        spec.n = 6;
        spec.dur_min = 0.4;
        spec.dur_max = 0.6;
        SyntheticCorpus corpus = generate_corpus(spec, work_dir("c9_corpus"));
        auto run = [&](const std::string& dir) {
            TrainConfig tc = small_stage2_config(11, 0.05, work_dir(dir));
            tc.batch_size = 4;
            tc.steps = 8;
            tc.sched = {2, 8, 1e-3, 1e-5};
            tc.eval_every = 4;
            tc.val_policy = "tail:2";
            tc.random_init = true;
            return stage2_train(tc, corpus);
        };
        TrainResult a = run("c9_run_a");
        TrainResult b = run("c9_run_b");
        auto strip_wall = [](const std::string& path) {
            std::ifstream f(path);
            std::string line, all;
            while (std::getline(f, line)) {
                const size_t comma = line.rfind(',');
                all += line.substr(0, comma);
                all += '\n';
            }
            return all;
        };
        REQUIRE(strip_wall(a.metrics_path) == strip_wall(b.metrics_path));
    }
    report.pass();
}

TEST_CASE("criterion 10: modality gap") {
    CriterionReport report(10, "hand oracles of the centroid-difference formula; magnitude in [0,2] during runs");
    auto unit2 = [](double x, double y) {
        const double n = std::sqrt(x * x + y * y);
        return std::pair<double, double>{x / n, y / n};
    };
    (void)unit2;

    // identical rows -> 0
    Tensor rows = Tensor::from({2, 2}, {1, 0, 0, 1});
    REQUIRE(modality_gap({rows, rows}).magnitude == 0.0);

    // swapped basis vectors -> centroids equal -> 0
    Tensor swapped = Tensor::from({2, 2}, {0, 1, 1, 0});
    REQUIRE(modality_gap({rows, swapped}).magnitude < 1e-12);

    // audio all (1,0), text all (0,1) -> gap (1,-1), magnitude sqrt(2)
    Tensor a = Tensor::from({2, 2}, {1, 0, 1, 0});
    Tensor t = Tensor::from({2, 2}, {0, 1, 0, 1});
    GapReport rep = modality_gap({a, t});
    REQUIRE(rep.gap[0] == 1.0);
    REQUIRE(rep.gap[1] == -1.0);
    REQUIRE(std::abs(rep.magnitude - std::sqrt(2.0)) < 1e-9);
    REQUIRE(std::abs(rep.magnitude - 1.41421) < 1e-5);

    // magnitude stayed in [0,2] throughout the criterion-6 runs
    REQUIRE(g_paired.ready);
    int rows_checked = 0;
    for (const auto* group : {&g_paired.baseline, &g_paired.sam}) {
        for (const auto& run : *group) {
            for (const auto& row : run.metrics) {
                REQUIRE(row.gap_norm >= 0.0);
                REQUIRE(row.gap_norm <= 2.0);
                ++rows_checked;
            }
        }
    }
    std::printf("    gap magnitude within [0,2] across %d logged rows\n", rows_checked);
    report.pass();
}
