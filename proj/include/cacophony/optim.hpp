#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cacophony/params.hpp"
#include "cacophony/tensor.hpp"

namespace cacophony {

struct ScheduleConfig {
    int warmup_steps = 10000;
    int total_steps = 300000;
    double peak_lr = 1e-5;
    double final_lr = 1e-6;
};

// Linear 0 -> peak over warmup, cosine peak -> final at total, flat after.
double schedule_lr(int64_t step, const ScheduleConfig& cfg);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    int64_t t = 0;
};

AdamWState adamw_init(const ParamStore& params);

// Bias-corrected Adam step from the grads stored in `params`, then the
// decoupled decay term -lr*wd*w on decay-flagged tensors. Aborts (throws,
// mutating nothing) when any gradient is non-finite.
void adamw_apply(ParamStore& params, AdamWState& state, const AdamWConfig& cfg, double lr);

struct SAMConfig {
    double rho = 0.0;  // neighborhood radius; 0 degrades to plain AdamW
};

// rho * g / ||g||_2 over the concatenation of all parameter gradients
// (single global norm). Gradient norm below 1e-12 yields all-zero
// perturbations.
std::vector<std::vector<double>> sam_perturb(const ParamStore& params, double rho);

struct StepResult {
    double loss = 0.0;  // loss at the unperturbed parameters (first pass)
    int passes = 0;     // forward/backward evaluations consumed
};

// Two-pass sharpness-aware step: gradient at w, perturb to w + eps_hat,
// gradient there, restore w exactly (from a snapshot), AdamW with the
// second-pass gradient. rho = 0 runs one pass and is bitwise identical to
// adamw_apply. A numeric error in either pass restores w and rethrows
// without touching optimizer state.
StepResult sam_step(const std::function<Tensor()>& loss_fn, ParamStore& params, AdamWState& state,
                    const AdamWConfig& adamw_cfg, double lr, const SAMConfig& sam_cfg);

}  // namespace cacophony
