#pragma once

#include <cstdint>
#include <vector>

#include "cacophony/mel.hpp"
#include "cacophony/tensor.hpp"

namespace cacophony {

constexpr int kPatchSize = 16;
constexpr int kPatchDim = kPatchSize * kPatchSize;  // 256
constexpr int kFreqPatches = kMelBands / kPatchSize;  // 8

struct PatchGrid {
    int t_patches = 0;
    int f_patches = kFreqPatches;
    Tensor patches;               // [N x 256], per-patch normalized
    std::vector<double> means;    // per patch, for reconstruction readout
    std::vector<double> stds;

    int n() const { return t_patches * f_patches; }
};

// (patch - mean) / (std + 1e-6) over the 256 values; population std.
void per_patch_normalize(std::vector<double>& patch, double& mean, double& stddev);

// Zero-pads the frame count up to a multiple of 16, cuts non-overlapping
// 16x16 patches, flattens them time-major (outer time patch, inner frequency
// patch) and normalizes each one.
PatchGrid patchify(const MelFrames& mel);

// Inverse readout: rebuilds the padded mel matrix from (possibly
// reconstructed) patch rows and the stored normalization stats.
MelFrames unpatchify(const Tensor& patch_rows, const PatchGrid& grid);

// Fixed sinusoidal table over time-patch positions: row p holds
// sin(p / 10000^(2i/dim)), cos(p / 10000^(2i/dim)) interleaved. dim must be
// even.
Tensor time_sinusoid_table(int n_positions, int dim);

struct PositionalEmbedding {
    Tensor time_table;  // fixed sinusoidal
    Tensor freq_table;  // trainable, N(0, 0.02^2)
};

PositionalEmbedding positional_embed(int t_patches, int f_patches, int dim, uint64_t seed);

enum class Stage { mae, clap };

struct MaskPlan {
    std::vector<int> kept;    // ascending patch indices fed to the encoder
    std::vector<int> masked;  // ascending; reconstruction targets (stage 1) or dropped (stage 2)
    std::vector<int> padded;  // ascending synthetic pad slots >= n_real
    uint64_t seed = 0;
    int n_real = 0;

    int n_total() const { return n_real + static_cast<int>(padded.size()); }
};

// Stage 1: kept = round(N*(1-mask_ratio)) indices (minimum 1) sampled
// uniformly without replacement, rest masked. Stage 2 length policy:
// N > target keeps a uniform sample of target indices and drops the rest;
// N <= target keeps everything and appends target - N pad slots.
MaskPlan make_mask_plan(int n, Stage stage, int target_len, double mask_ratio, uint64_t seed);

}  // namespace cacophony
