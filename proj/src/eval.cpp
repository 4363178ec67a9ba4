#include "cacophony/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cacophony/mel.hpp"
#include "cacophony/optim.hpp"
#include "cacophony/rng.hpp"
#include "cacophony/wav.hpp"

namespace cacophony {

namespace {

MaskPlan eval_plan(int n_patches, const EvalConfig& ecfg, uint64_t clip_salt) {
    MaskPlan plan;
    plan.n_real = n_patches;
    if (n_patches <= ecfg.patch_budget) {
        plan.kept.resize(static_cast<size_t>(n_patches));
        std::iota(plan.kept.begin(), plan.kept.end(), 0);
        return plan;
    }
    // Budget exceeded: uniform random subsample, seed recorded in the plan.
    plan.seed = mix_seed(ecfg.seed ^ 0xEBADULL, clip_salt);
    Rng rng(plan.seed);
    plan.kept = rng.sample_without_replacement(n_patches, ecfg.patch_budget);
    for (int i = 0, k = 0; i < n_patches; ++i) {
        if (k < static_cast<int>(plan.kept.size()) && plan.kept[static_cast<size_t>(k)] == i)
            ++k;
        else
            plan.masked.push_back(i);
    }
    return plan;
}

std::vector<uint8_t> text_key_valid(const TokenSequence& tokens) {
    std::vector<uint8_t> valid(tokens.pad_mask.size());
    for (size_t i = 0; i < valid.size(); ++i) valid[i] = tokens.pad_mask[i] ? 0 : 1;
    return valid;
}

}  // namespace

Tensor embed_clip(const std::vector<double>& samples, ParamStore& ps, const ModelConfig& cfg,
                  const EvalConfig& ecfg, uint64_t clip_salt) {
    PatchGrid grid = patchify(mel_spectrogram(samples));
    MaskPlan plan = eval_plan(grid.n(), ecfg, clip_salt);
    Tensor enc = audio_encode(grid, plan, ps, cfg);
    return project_embed(attention_pool(enc, {}, ps, "audio_pool", cfg.pool_heads), ps, Side::audio);
}

Tensor embed_text(const std::string& text, ParamStore& ps, const ModelConfig& cfg, const Vocab& vocab) {
    TokenSequence tokens = tokenize(text, vocab, cfg.max_text_len);
    Tensor enc = text_encode(tokens, ps, cfg);
    return project_embed(attention_pool(enc, text_key_valid(tokens), ps, "text_pool", cfg.pool_heads), ps,
                         Side::text);
}

EmbeddingBatch embed_corpus(const SyntheticCorpus& corpus, ParamStore& ps, const ModelConfig& cfg,
                            const Vocab& vocab, const EvalConfig& ecfg) {
    if (corpus.items.empty()) throw std::invalid_argument("embed_corpus: empty corpus");
    std::vector<Tensor> audio_rows, text_rows;
    for (size_t i = 0; i < corpus.items.size(); ++i) {
        const auto& item = corpus.items[i];
        audio_rows.push_back(embed_clip(load_wav(item.wav_path), ps, cfg, ecfg, static_cast<uint64_t>(i)));
        text_rows.push_back(embed_text(item.caption, ps, cfg, vocab));
    }
    EmbeddingBatch batch;
    batch.audio = concat_rows(audio_rows);
    batch.text = concat_rows(text_rows);
    return batch;
}

nlohmann::json RetrievalReport::to_json() const {
    nlohmann::json j;
    j["direction"] = direction;
    j["n_queries"] = n_queries;
    for (size_t i = 0; i < ks.size(); ++i) j["recall_at_" + std::to_string(ks[i])] = recall[i];
    return j;
}

std::pair<RetrievalReport, RetrievalReport> retrieval_eval(const EmbeddingBatch& batch, const std::vector<int>& ks,
                                                           std::vector<int>* per_query_ranks) {
    validate_embedding_batch(batch);
    const int n = batch.n();
    if (ks.empty()) throw std::invalid_argument("retrieval_eval: no ks");
    for (int k : ks)
        if (k < 1 || k > n) throw std::invalid_argument("retrieval_eval: need 1 <= k <= N");

    const int d = batch.audio.cols();
    auto rank_of_match = [&](const Tensor& queries, const Tensor& candidates, int q) {
        // candidates sorted by similarity descending, ties toward lower index;
        // rank of the aligned candidate q.
        std::vector<double> sims(static_cast<size_t>(n));
        for (int c = 0; c < n; ++c) {
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += queries.at(q, j) * candidates.at(c, j);
            sims[static_cast<size_t>(c)] = dot;
        }
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            if (sims[static_cast<size_t>(a)] != sims[static_cast<size_t>(b)])
                return sims[static_cast<size_t>(a)] > sims[static_cast<size_t>(b)];
            return a < b;
        });
        for (int pos = 0; pos < n; ++pos)
            if (order[static_cast<size_t>(pos)] == q) return pos + 1;
        return n;
    };

    auto report_for = [&](const Tensor& queries, const Tensor& candidates, const std::string& direction) {
        RetrievalReport rep;
        rep.direction = direction;
        rep.ks = ks;
        rep.n_queries = n;
        std::vector<int> hits(ks.size(), 0);
        for (int q = 0; q < n; ++q) {
            const int rank = rank_of_match(queries, candidates, q);
            if (per_query_ranks) per_query_ranks->push_back(rank);
            for (size_t i = 0; i < ks.size(); ++i)
                if (rank <= ks[i]) ++hits[i];
        }
        for (size_t i = 0; i < ks.size(); ++i)
            rep.recall.push_back(100.0 * static_cast<double>(hits[i]) / static_cast<double>(n));
        return rep;
    };

    return {report_for(batch.text, batch.audio, "text_to_audio"),
            report_for(batch.audio, batch.text, "audio_to_text")};
}

ZeroShotResult zero_shot_classify(const Tensor& audio_embeds, const std::vector<int>& true_labels,
                                  const std::vector<std::string>& labels, const std::string& templ, ParamStore& ps,
                                  const ModelConfig& cfg, const Vocab& vocab) {
    if (labels.empty()) throw std::invalid_argument("zero_shot_classify: need at least one label");
    if (!true_labels.empty() && static_cast<int>(true_labels.size()) != audio_embeds.rows())
        throw std::invalid_argument("zero_shot_classify: label count mismatch");

    std::vector<Tensor> label_rows;
    for (const auto& label : labels)
        label_rows.push_back(embed_text(apply_prompt_template(label, templ), ps, cfg, vocab));
    Tensor label_mat = concat_rows(label_rows);

    ZeroShotResult out;
    const int n = audio_embeds.rows(), d = audio_embeds.cols(), c = label_mat.rows();
    int correct = 0;
    for (int q = 0; q < n; ++q) {
        int best = 0;
        double best_sim = -2.0;
        for (int l = 0; l < c; ++l) {
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += audio_embeds.at(q, j) * label_mat.at(l, j);
            if (dot > best_sim) {  // ties stay at the lower label index
                best_sim = dot;
                best = l;
            }
        }
        out.predicted.push_back(best);
        if (!true_labels.empty() && best == true_labels[static_cast<size_t>(q)]) ++correct;
    }
    out.accuracy = true_labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
    return out;
}

nlohmann::json GapReport::to_json() const { return nlohmann::json{{"gap", gap}, {"magnitude", magnitude}}; }

GapReport modality_gap(const EmbeddingBatch& batch) {
    if (batch.n() < 1) throw std::invalid_argument("modality_gap: empty batch");
    const int n = batch.n(), d = batch.audio.cols();
    GapReport rep;
    rep.gap.resize(static_cast<size_t>(d), 0.0);
    for (int c = 0; c < d; ++c) {
        double ax = 0.0, tx = 0.0;
        for (int r = 0; r < n; ++r) {
            ax += batch.audio.at(r, c);
            tx += batch.text.at(r, c);
        }
        rep.gap[static_cast<size_t>(c)] = ax / n - tx / n;
        rep.magnitude += rep.gap[static_cast<size_t>(c)] * rep.gap[static_cast<size_t>(c)];
    }
    rep.magnitude = std::sqrt(rep.magnitude);
    return rep;
}

TokenSequence generate_caption(const std::vector<double>& samples, ParamStore& ps, const ModelConfig& cfg,
                               double temperature, int max_len, uint64_t seed, int patch_budget) {
    if (temperature < 0.0) throw std::invalid_argument("generate_caption: temperature must be >= 0");
    PatchGrid grid = patchify(mel_spectrogram(samples));
    EvalConfig ecfg;
    ecfg.patch_budget = patch_budget;
    ecfg.seed = seed;
    MaskPlan plan = eval_plan(grid.n(), ecfg, 0);
    Tensor mem = audio_encode(grid, plan, ps, cfg);

    Rng rng(mix_seed(seed, 0xCA9));
    TokenSequence seq;
    seq.ids.push_back(Vocab::BOS);
    seq.pad_mask.push_back(0);
    while (seq.length() < max_len) {
        Tensor logits = text_decode(seq, mem, ps, cfg);
        const int last = seq.length() - 1;
        const int v = logits.cols();
        int next = 0;
        if (temperature == 0.0) {
            for (int j = 1; j < v; ++j)
                if (logits.at(last, j) > logits.at(last, next)) next = j;
        } else {
            double mx = logits.at(last, 0);
            for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(last, j));
            std::vector<double> p(static_cast<size_t>(v));
            double denom = 0.0;
            for (int j = 0; j < v; ++j) {
                p[static_cast<size_t>(j)] = std::exp((logits.at(last, j) - mx) / temperature);
                denom += p[static_cast<size_t>(j)];
            }
            double u = rng.uniform() * denom;
            double acc = 0.0;
            next = v - 1;
            for (int j = 0; j < v; ++j) {
                acc += p[static_cast<size_t>(j)];
                if (u < acc) {
                    next = j;
                    break;
                }
            }
        }
        seq.ids.push_back(next);
        seq.pad_mask.push_back(0);
        if (next == Vocab::EOS) break;
    }
    return seq;
}

double train_probe(const Tensor& embeddings, const std::vector<int>& labels, const ProbeConfig& cfg) {
    const int n = embeddings.rows(), d = embeddings.cols();
    if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("train_probe: label count mismatch");
    int n_classes = 0;
    for (int l : labels) {
        if (l < 0) throw std::invalid_argument("train_probe: negative label");
        n_classes = std::max(n_classes, l + 1);
    }
    if (n_classes < 2) throw std::invalid_argument("train_probe: need at least two classes");
    if (cfg.layers < 1) throw std::invalid_argument("train_probe: need at least one layer");

    const int n_train = std::max(1, static_cast<int>(std::lround(cfg.train_fraction * n)));
    if (n_train >= n) throw std::invalid_argument("train_probe: empty held-out split");

    // Probe parameters only; the embedding matrix enters as a constant.
    ParamStore ps;
    Rng rng(mix_seed(cfg.seed, 0x9806E));
    std::vector<int> widths;
    widths.push_back(d);
    for (int i = 0; i < cfg.layers - 1; ++i) widths.push_back(cfg.hidden);
    widths.push_back(n_classes);
    for (int i = 0; i < cfg.layers; ++i) {
        const int in = widths[static_cast<size_t>(i)], out = widths[static_cast<size_t>(i) + 1];
        std::vector<double> w(static_cast<size_t>(in) * out);
        for (double& v : w) v = rng.gaussian(0.0, std::sqrt(1.0 / in));
        ps.add("l" + std::to_string(i) + ".w", Tensor::from({in, out}, std::move(w), true), true);
        ps.add("l" + std::to_string(i) + ".b", Tensor::zeros({out}, true), false);
    }

    Tensor train_x = slice_rows(embeddings, 0, n_train);
    std::vector<int> train_y(labels.begin(), labels.begin() + n_train);
    auto forward = [&](const Tensor& x) {
        Tensor h = x;
        for (int i = 0; i < cfg.layers; ++i) {
            h = add_rowvec(matmul(h, ps.at("l" + std::to_string(i) + ".w")), ps.at("l" + std::to_string(i) + ".b"));
            if (i + 1 < cfg.layers) h = silu(h);
        }
        return h;
    };

    AdamWState opt = adamw_init(ps);
    AdamWConfig acfg;
    acfg.weight_decay = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        ps.zero_grad();
        Tensor loss = cross_entropy_from_logits(forward(train_x), train_y);
        backward(loss);
        adamw_apply(ps, opt, acfg, cfg.lr);
    }

    Tensor held_logits = forward(slice_rows(embeddings, n_train, n));
    int correct = 0;
    for (int r = 0; r < n - n_train; ++r) {
        int best = 0;
        for (int j = 1; j < n_classes; ++j)
            if (held_logits.at(r, j) > held_logits.at(r, best)) best = j;
        if (best == labels[static_cast<size_t>(n_train + r)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n - n_train);
}

}  // namespace cacophony
