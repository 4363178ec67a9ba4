#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cacophony/corpus.hpp"
#include "cacophony/model.hpp"
#include "cacophony/objectives.hpp"
#include "cacophony/optim.hpp"
#include "cacophony/text.hpp"

#include <json.hpp>

namespace cacophony {

struct TrainConfig {
    std::string stage = "clap";  // mae | clap
    ModelConfig model;
    int batch_size = 8;
    int steps = 300;
    ScheduleConfig sched{20, 300, 1e-3, 1e-5};
    AdamWConfig adamw{};
    double sam_rho = 0.0;
    double lambda_cap = 1.0;
    double mask_ratio = 0.8;       // stage 1
    std::string mae_mode = "masked_only";  // masked_only | all
    int target_len = 128;          // stage 2 length policy
    double crop_seconds = 2.0;     // stage 1 crop
    uint64_t seed = 0;
    int eval_every = 25;
    int ckpt_every = 0;  // 0: final checkpoint only
    std::string init_checkpoint;  // stage 2: stage-1 encoder-only base path
    bool random_init = false;     // stage 2 ablation: skip stage-1 init
    std::string resume_from;      // base path of a mid-run checkpoint
    std::string val_policy = "hash";  // hash | none | tail:<k>
    std::string out_dir;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig desk_mae();
    static TrainConfig desk_clap();
    // Reference-scale hyperparameters from the original system, echoed for
    // documentation; far beyond what this artifact can train.
    static nlohmann::json reference_presets();
};

struct MetricsRow {
    int64_t step = 0;
    std::string split;  // train | val
    double loss_total = 0.0;
    double loss_con = 0.0;
    double loss_cap = 0.0;
    double loss_mae = 0.0;
    double lr = 0.0;
    double tau = 0.0;
    double gap_norm = 0.0;
    double wall_ms = 0.0;

    static const char* csv_header();
    std::string to_csv() const;
};

std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// Corpus decoded into memory with the train/val split and (stage 2) the
// vocabulary applied.
struct LoadedCorpus {
    const SyntheticCorpus* corpus = nullptr;
    std::vector<std::vector<double>> samples;
    std::vector<int> train_idx;
    std::vector<int> val_idx;
    Vocab vocab;
};

// Template words are folded into the vocabulary so zero-shot prompts stay
// in-vocabulary.
extern const std::vector<std::string> kPromptTemplateWords;

LoadedCorpus load_corpus(const SyntheticCorpus& corpus, const TrainConfig& cfg);

struct BatchItem {
    int item_index = 0;
    PatchGrid grid;
    MaskPlan plan;
    TokenSequence tokens;
};

// All randomness (item choice, crops, mask plans) derives from (seed, step).
std::vector<BatchItem> build_batch(const LoadedCorpus& data, const TrainConfig& cfg, int64_t step);

struct TrainResult {
    std::string checkpoint_base;
    std::string encoder_base;  // stage 1 only
    std::string metrics_path;
    std::vector<MetricsRow> metrics;
    std::vector<int> passes_per_step;
    int64_t forward_backward_count = 0;
};

TrainResult stage1_train(const TrainConfig& cfg, const SyntheticCorpus& corpus);
TrainResult stage2_train(const TrainConfig& cfg, const SyntheticCorpus& corpus);

}  // namespace cacophony
