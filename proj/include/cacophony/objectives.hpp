#pragma once

#include <vector>

#include "cacophony/params.hpp"
#include "cacophony/patches.hpp"
#include "cacophony/tensor.hpp"
#include "cacophony/text.hpp"

namespace cacophony {

// Index-aligned l2-normalized audio/text embedding pairs, one row each.
struct EmbeddingBatch {
    Tensor audio;  // [N x d]
    Tensor text;   // [N x d]

    int n() const { return audio.defined() ? audio.rows() : 0; }
};

// Throws unless both sides have equal row counts and unit rows (1e-5).
void validate_embedding_batch(const EmbeddingBatch& batch);

// Learnable s = ln(1/tau); tau = exp(-s). 1/tau is clamped at 100 after each
// optimizer step.
constexpr double kInitInvTau = 14.3;
constexpr double kMaxInvTau = 100.0;

double temperature_tau(const ParamStore& ps);
void temperature_update_clamp(ParamStore& ps);

// Symmetric InfoNCE over the N x N similarity matrix x . y^T / tau:
// mean row-wise cross entropy (audio-to-text) plus mean column-wise cross
// entropy (text-to-audio) against the diagonal pairing. inv_tau is a
// single-element tensor so the temperature receives gradient.
Tensor info_nce_loss(const Tensor& audio, const Tensor& text, const Tensor& inv_tau);

// Numeric wrapper with the unit-row precondition check.
double info_nce(const EmbeddingBatch& batch, double tau);

// Teacher-forced captioning NLL: logits row t scores token t+1; PAD targets
// are excluded; mean over the non-pad target positions.
Tensor captioning_nll_loss(const Tensor& logits, const TokenSequence& targets);
double captioning_nll(const Tensor& logits, const TokenSequence& targets);

enum class MaeMode { masked_only, all };

// MSE between reconstruction rows and the per-patch-normalized targets, over
// masked patches (default) or all real patches.
Tensor mae_mse_loss(const Tensor& recon, const PatchGrid& target, const MaskPlan& plan,
                    MaeMode mode = MaeMode::masked_only);
double mae_mse(const Tensor& recon, const PatchGrid& target, const MaskPlan& plan,
               MaeMode mode = MaeMode::masked_only);

struct LossBreakdown {
    double total = 0.0;
    double contrastive = 0.0;
    double captioning = 0.0;
    double mae = 0.0;
    double lambda_cap = 1.0;
};

// total = contrastive + lambda_cap * captioning, per-item NLLs averaged over
// the batch.
LossBreakdown combined_loss(const EmbeddingBatch& batch, const std::vector<Tensor>& logits_per_item,
                            const std::vector<TokenSequence>& targets_per_item, double lambda_cap, double tau);

}  // namespace cacophony
