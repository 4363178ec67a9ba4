#include "cacophony/patches.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cacophony/rng.hpp"

namespace cacophony {

void per_patch_normalize(std::vector<double>& patch, double& mean, double& stddev) {
    const size_t n = patch.size();
    double mu = 0.0;
    for (double v : patch) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : patch) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    for (double& v : patch) v = (v - mu) / (sd + 1e-6);
    mean = mu;
    stddev = sd;
}

PatchGrid patchify(const MelFrames& mel) {
    if (mel.n_frames < 1) throw std::invalid_argument("patchify: no frames");
    const int padded_frames = ((mel.n_frames + kPatchSize - 1) / kPatchSize) * kPatchSize;
    const int t_patches = padded_frames / kPatchSize;
    const int n = t_patches * kFreqPatches;

    PatchGrid grid;
    grid.t_patches = t_patches;
    grid.means.resize(static_cast<size_t>(n));
    grid.stds.resize(static_cast<size_t>(n));
    std::vector<double> rows(static_cast<size_t>(n) * kPatchDim, 0.0);

    std::vector<double> patch(kPatchDim);
    for (int tp = 0; tp < t_patches; ++tp) {
        for (int fp = 0; fp < kFreqPatches; ++fp) {
            for (int r = 0; r < kPatchSize; ++r) {
                const int frame = tp * kPatchSize + r;
                for (int c = 0; c < kPatchSize; ++c) {
                    const int band = fp * kPatchSize + c;
                    patch[static_cast<size_t>(r) * kPatchSize + c] =
                        frame < mel.n_frames ? mel.at(frame, band) : 0.0;
                }
            }
            const int p = tp * kFreqPatches + fp;  // time-major flattening
            per_patch_normalize(patch, grid.means[static_cast<size_t>(p)], grid.stds[static_cast<size_t>(p)]);
            std::copy(patch.begin(), patch.end(), rows.begin() + static_cast<long>(p) * kPatchDim);
        }
    }
    grid.patches = Tensor::from({n, kPatchDim}, std::move(rows));
    return grid;
}

MelFrames unpatchify(const Tensor& patch_rows, const PatchGrid& grid) {
    if (patch_rows.rows() != grid.n() || patch_rows.cols() != kPatchDim)
        throw std::invalid_argument("unpatchify: row shape does not match grid");
    MelFrames out;
    out.n_frames = grid.t_patches * kPatchSize;
    out.v.assign(static_cast<size_t>(out.n_frames) * kMelBands, 0.0);
    for (int p = 0; p < grid.n(); ++p) {
        const int tp = p / kFreqPatches;
        const int fp = p % kFreqPatches;
        const double mu = grid.means[static_cast<size_t>(p)];
        const double sd = grid.stds[static_cast<size_t>(p)];
        for (int r = 0; r < kPatchSize; ++r)
            for (int c = 0; c < kPatchSize; ++c) {
                const double norm = patch_rows.at(p, r * kPatchSize + c);
                out.v[static_cast<size_t>(tp * kPatchSize + r) * kMelBands + fp * kPatchSize + c] =
                    norm * (sd + 1e-6) + mu;
            }
    }
    return out;
}

Tensor time_sinusoid_table(int n_positions, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("time_sinusoid_table: dim must be even");
    std::vector<double> v(static_cast<size_t>(n_positions) * dim);
    for (int p = 0; p < n_positions; ++p)
        for (int i = 0; i < dim / 2; ++i) {
            const double angle = p / std::pow(10000.0, 2.0 * i / dim);
            v[static_cast<size_t>(p) * dim + 2 * i] = std::sin(angle);
            v[static_cast<size_t>(p) * dim + 2 * i + 1] = std::cos(angle);
        }
    return Tensor::from({n_positions, dim}, std::move(v));
}

PositionalEmbedding positional_embed(int t_patches, int f_patches, int dim, uint64_t seed) {
    PositionalEmbedding out;
    out.time_table = time_sinusoid_table(t_patches, dim);
    Rng rng(seed);
    std::vector<double> freq(static_cast<size_t>(f_patches) * dim);
    for (double& v : freq) v = rng.gaussian(0.0, 0.02);
    out.freq_table = Tensor::from({f_patches, dim}, std::move(freq), true);
    return out;
}

MaskPlan make_mask_plan(int n, Stage stage, int target_len, double mask_ratio, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("make_mask_plan: need at least one patch");
    if (mask_ratio < 0.0 || mask_ratio >= 1.0) throw std::invalid_argument("make_mask_plan: mask_ratio must be in [0, 1)");

    MaskPlan plan;
    plan.seed = seed;
    plan.n_real = n;
    Rng rng(seed);

    if (stage == Stage::mae) {
        const int keep = std::max(1, static_cast<int>(std::lround(n * (1.0 - mask_ratio))));
        plan.kept = rng.sample_without_replacement(n, keep);
        std::vector<uint8_t> is_kept(static_cast<size_t>(n), 0);
        for (int i : plan.kept) is_kept[static_cast<size_t>(i)] = 1;
        for (int i = 0; i < n; ++i)
            if (!is_kept[static_cast<size_t>(i)]) plan.masked.push_back(i);
        return plan;
    }

    if (target_len < 1) throw std::invalid_argument("make_mask_plan: target_len must be positive for stage 2");
    if (n > target_len) {
        plan.kept = rng.sample_without_replacement(n, target_len);
        std::vector<uint8_t> is_kept(static_cast<size_t>(n), 0);
        for (int i : plan.kept) is_kept[static_cast<size_t>(i)] = 1;
        for (int i = 0; i < n; ++i)
            if (!is_kept[static_cast<size_t>(i)]) plan.masked.push_back(i);
    } else {
        plan.kept.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) plan.kept[static_cast<size_t>(i)] = i;
        for (int i = n; i < target_len; ++i) plan.padded.push_back(i);
    }
    return plan;
}

}  // namespace cacophony
