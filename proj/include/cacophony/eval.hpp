#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cacophony/corpus.hpp"
#include "cacophony/model.hpp"
#include "cacophony/objectives.hpp"
#include "cacophony/text.hpp"

#include <json.hpp>

namespace cacophony {

struct EvalConfig {
    int patch_budget = 512;  // full sequence used when it fits, else a logged
                             // uniform subsample of this many patches
    uint64_t seed = 0;
};

// Audio embedded from the full (unmasked, unsampled) patch sequence when it
// fits the budget; text embedded in full. Rows are index-aligned pairs.
EmbeddingBatch embed_corpus(const SyntheticCorpus& corpus, ParamStore& ps, const ModelConfig& cfg,
                            const Vocab& vocab, const EvalConfig& ecfg);

// Single-clip audio embedding (shared by zero-shot and captioning paths).
Tensor embed_clip(const std::vector<double>& samples, ParamStore& ps, const ModelConfig& cfg,
                  const EvalConfig& ecfg, uint64_t clip_salt = 0);

Tensor embed_text(const std::string& text, ParamStore& ps, const ModelConfig& cfg, const Vocab& vocab);

struct RetrievalReport {
    std::string direction;  // text_to_audio | audio_to_text
    std::vector<int> ks;
    std::vector<double> recall;  // percentages, aligned with ks
    int n_queries = 0;

    nlohmann::json to_json() const;
};

// Cosine ranking with ties broken toward the lower candidate index.
// Returns {text_to_audio, audio_to_text}. per_query_ranks (optional) receives
// the 1-based rank of the true match per query, both directions concatenated.
std::pair<RetrievalReport, RetrievalReport> retrieval_eval(const EmbeddingBatch& batch, const std::vector<int>& ks,
                                                           std::vector<int>* per_query_ranks = nullptr);

struct ZeroShotResult {
    std::vector<int> predicted;  // label index per clip
    double accuracy = 0.0;       // fraction in [0, 1]
};

ZeroShotResult zero_shot_classify(const Tensor& audio_embeds, const std::vector<int>& true_labels,
                                  const std::vector<std::string>& labels, const std::string& templ, ParamStore& ps,
                                  const ModelConfig& cfg, const Vocab& vocab);

struct GapReport {
    std::vector<double> gap;  // centroid(audio) - centroid(text)
    double magnitude = 0.0;

    nlohmann::json to_json() const;
};

GapReport modality_gap(const EmbeddingBatch& batch);

// Autoregressive decode from BOS; temperature 0 is argmax (ties toward the
// lower token id), otherwise softmax sampling at the given temperature.
TokenSequence generate_caption(const std::vector<double>& samples, ParamStore& ps, const ModelConfig& cfg,
                               double temperature, int max_len, uint64_t seed, int patch_budget = 512);

struct ProbeConfig {
    int layers = 4;  // linear layers; 4 = AQA preset, 2 = shallow HEAR preset
    int hidden = 32;
    int epochs = 40;
    double lr = 1e-2;
    double train_fraction = 0.8;
    uint64_t seed = 0;
};

// Trains an MLP on frozen embeddings (the backbone is never touched) and
// returns held-out accuracy.
double train_probe(const Tensor& embeddings, const std::vector<int>& labels, const ProbeConfig& cfg);

}  // namespace cacophony
