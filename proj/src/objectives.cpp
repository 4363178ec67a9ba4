#include "cacophony/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace cacophony {

void validate_embedding_batch(const EmbeddingBatch& batch) {
    if (!batch.audio.defined() || !batch.text.defined())
        throw std::invalid_argument("EmbeddingBatch: undefined sides");
    if (batch.audio.rows() != batch.text.rows() || batch.audio.cols() != batch.text.cols())
        throw std::invalid_argument("EmbeddingBatch: audio/text shapes differ");
    for (const Tensor* side : {&batch.audio, &batch.text}) {
        const int n = side->rows(), d = side->cols();
        for (int r = 0; r < n; ++r) {
            double sq = 0.0;
            for (int c = 0; c < d; ++c) sq += side->at(r, c) * side->at(r, c);
            if (std::abs(std::sqrt(sq) - 1.0) > 1e-5)
                throw std::invalid_argument("EmbeddingBatch: row " + std::to_string(r) + " is not unit norm");
        }
    }
}

double temperature_tau(const ParamStore& ps) { return std::exp(-ps.at("temperature.s").at(0)); }

void temperature_update_clamp(ParamStore& ps) {
    auto& s = ps.at("temperature.s").data();
    const double cap = std::log(kMaxInvTau);
    if (s[0] > cap) s[0] = cap;
}

Tensor info_nce_loss(const Tensor& audio, const Tensor& text, const Tensor& inv_tau) {
    if (audio.rows() != text.rows() || audio.cols() != text.cols())
        throw std::invalid_argument("info_nce_loss: audio/text shapes differ");
    const int n = audio.rows();
    Tensor sim = mul_scalar(matmul(audio, transpose(text)), inv_tau);
    std::vector<int> diag(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) diag[static_cast<size_t>(i)] = i;
    Tensor audio_to_text = cross_entropy_from_logits(sim, diag);
    Tensor text_to_audio = cross_entropy_from_logits(transpose(sim), diag);
    return add(audio_to_text, text_to_audio);
}

double info_nce(const EmbeddingBatch& batch, double tau) {
    validate_embedding_batch(batch);
    if (tau <= 0.0) throw std::invalid_argument("info_nce: tau must be positive");
    return info_nce_loss(batch.audio, batch.text, Tensor::scalar(1.0 / tau)).item();
}

Tensor captioning_nll_loss(const Tensor& logits, const TokenSequence& targets) {
    const int len = targets.length();
    if (len < 2) throw std::invalid_argument("captioning_nll: sequence too short for teacher forcing");
    // logits rows may cover the full sequence or already stop at the last
    // input position; either way row t predicts token t+1.
    const int steps = len - 1;
    if (logits.rows() < steps) throw std::invalid_argument("captioning_nll: not enough logit rows");

    std::vector<int> shifted(static_cast<size_t>(steps));
    std::vector<uint8_t> valid(static_cast<size_t>(steps));
    int n_valid = 0;
    for (int t = 0; t < steps; ++t) {
        shifted[static_cast<size_t>(t)] = targets.ids[static_cast<size_t>(t) + 1];
        const bool ok = targets.ids[static_cast<size_t>(t) + 1] != Vocab::PAD;
        valid[static_cast<size_t>(t)] = ok ? 1 : 0;
        n_valid += ok ? 1 : 0;
    }
    if (n_valid == 0) throw std::invalid_argument("captioning_nll: no non-pad targets");
    Tensor rows = logits.rows() == steps ? logits : slice_rows(logits, 0, steps);
    return cross_entropy_from_logits(rows, shifted, valid);
}

double captioning_nll(const Tensor& logits, const TokenSequence& targets) {
    return captioning_nll_loss(logits, targets).item();
}

Tensor mae_mse_loss(const Tensor& recon, const PatchGrid& target, const MaskPlan& plan, MaeMode mode) {
    if (recon.rows() != target.n() || recon.cols() != kPatchDim)
        throw std::invalid_argument("mae_mse: reconstruction shape does not match grid");
    const std::vector<int>* rows = nullptr;
    std::vector<int> all_rows;
    if (mode == MaeMode::masked_only) {
        if (plan.masked.empty()) throw std::invalid_argument("mae_mse: masked set is empty in masked_only mode");
        rows = &plan.masked;
    } else {
        all_rows.resize(static_cast<size_t>(plan.n_real));
        for (int i = 0; i < plan.n_real; ++i) all_rows[static_cast<size_t>(i)] = i;
        rows = &all_rows;
    }
    Tensor diff = sub(gather_rows(recon, *rows), gather_rows(target.patches, *rows));
    return mean(mul(diff, diff));
}

double mae_mse(const Tensor& recon, const PatchGrid& target, const MaskPlan& plan, MaeMode mode) {
    return mae_mse_loss(recon, target, plan, mode).item();
}

LossBreakdown combined_loss(const EmbeddingBatch& batch, const std::vector<Tensor>& logits_per_item,
                            const std::vector<TokenSequence>& targets_per_item, double lambda_cap, double tau) {
    if (lambda_cap < 0.0) throw std::invalid_argument("combined_loss: lambda_cap must be >= 0");
    if (logits_per_item.size() != targets_per_item.size())
        throw std::invalid_argument("combined_loss: logits/targets count mismatch");
    LossBreakdown out;
    out.lambda_cap = lambda_cap;
    out.contrastive = info_nce(batch, tau);
    double cap = 0.0;
    for (size_t i = 0; i < logits_per_item.size(); ++i)
        cap += captioning_nll(logits_per_item[i], targets_per_item[i]);
    out.captioning = logits_per_item.empty() ? 0.0 : cap / static_cast<double>(logits_per_item.size());
    out.total = out.contrastive + lambda_cap * out.captioning;
    return out;
}

}  // namespace cacophony
