#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cacophony/params.hpp"
#include "cacophony/patches.hpp"
#include "cacophony/tensor.hpp"
#include "cacophony/text.hpp"

#include <json.hpp>

namespace cacophony {

struct NetConfig {
    int depth = 4;
    int heads = 4;
    int d_model = 128;
    int d_ff = 256;
};

struct ModelConfig {
    NetConfig audio_enc{4, 4, 128, 256};
    NetConfig mae_dec{2, 4, 128, 256};
    NetConfig text_enc{4, 4, 128, 256};
    int text_dec_depth = 2;  // encoder depth / 2, rounded up
    int pool_heads = 4;
    int d_embed = 64;
    int vocab_size = 16;
    int max_text_len = kMaxTextLen;

    static ModelConfig desk();
    // Shapes from the reference system: 12-layer ViT-B encoders (768/3072,
    // 8 heads), 12-layer MAE decoder, 8-head poolers. Documentation preset,
    // far too large to train here.
    static ModelConfig reference_scale();
    // Tiny config for finite-difference sweeps over every parameter.
    static ModelConfig micro();

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

enum class Side { audio, text };

// Parameter registration. Stage 1 owns the audio encoder and MAE decoder;
// stage 2 owns the audio encoder, text encoder/decoder, the two attention
// poolers, both projection matrices and the temperature.
void init_stage1_params(ParamStore& ps, const ModelConfig& cfg, uint64_t seed);
void init_stage2_params(ParamStore& ps, const ModelConfig& cfg, uint64_t seed);

bool is_encoder_param(const std::string& name);

// Copies audio-encoder tensors from a stage-1 checkpoint; throws when the
// checkpoint was produced under a different audio-encoder config.
void load_encoder_params(ParamStore& dst, const LoadedCheckpoint& ck, const ModelConfig& expect);

// Closed-form parameter count for a config (no allocation), cross-checked
// against an instantiated store in the tests.
int64_t param_count_for_config(const ModelConfig& cfg);

// Linear patch projection + positional embeddings on all patches, then only
// the kept patches (plus masked-out pad slots) run through the blocks.
// Returns the kept rows only.
Tensor audio_encode(const PatchGrid& grid, const MaskPlan& plan, ParamStore& ps, const ModelConfig& cfg);

// Re-assembles kept embeddings and the shared mask token in original patch
// order, adds decoder positional embeddings, runs the decoder blocks and the
// linear reconstruction head. One 256-vector per patch position.
Tensor mae_decode(const Tensor& enc_out, const MaskPlan& plan, ParamStore& ps, const ModelConfig& cfg);

// Causal text encoder; PAD positions are masked out of attention.
Tensor text_encode(const TokenSequence& tokens, ParamStore& ps, const ModelConfig& cfg);

// Decoder blocks stacked on the text encoder output: causal self-attention,
// cross-attention over audio_mem, feed-forward; final linear to vocab logits.
Tensor text_decode(const TokenSequence& tokens, const Tensor& audio_mem, ParamStore& ps, const ModelConfig& cfg,
                   bool use_cross = true);

// Single learned query attending over seq; pad rows masked out.
Tensor attention_pool(const Tensor& seq, const std::vector<uint8_t>& key_valid, ParamStore& ps,
                      const std::string& prefix, int heads);

// Learned linear map (no bias) to the shared embedding space, l2-normalized.
Tensor project_embed(const Tensor& pooled, ParamStore& ps, Side side);

}  // namespace cacophony
