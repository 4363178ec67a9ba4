#include "cacophony/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cacophony {

namespace {

constexpr double kPi = 3.14159265358979323846;

double qz1(double v) {
    return precision() == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void check_grads_finite(const ParamStore& params) {
    for (const auto& e : params.entries()) {
        if (!e.tensor.has_grad()) continue;
        for (double g : e.tensor.grad())
            if (!std::isfinite(g)) throw std::runtime_error("adamw_apply: non-finite gradient in " + e.name);
    }
}

}  // namespace

double schedule_lr(int64_t step, const ScheduleConfig& cfg) {
    if (!(cfg.warmup_steps > 0 && cfg.warmup_steps < cfg.total_steps))
        throw std::invalid_argument("schedule_lr: need 0 < warmup_steps < total_steps");
    if (cfg.final_lr > cfg.peak_lr) throw std::invalid_argument("schedule_lr: final_lr must not exceed peak_lr");
    if (step < 0) throw std::invalid_argument("schedule_lr: negative step");
    if (step < cfg.warmup_steps)
        return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    if (step >= cfg.total_steps) return cfg.final_lr;
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * 0.5 * (1.0 + std::cos(kPi * progress));
}

AdamWState adamw_init(const ParamStore& params) {
    AdamWState st;
    st.m.reserve(params.count());
    st.v.reserve(params.count());
    for (const auto& e : params.entries()) {
        st.m.emplace_back(static_cast<size_t>(e.tensor.size()), 0.0);
        st.v.emplace_back(static_cast<size_t>(e.tensor.size()), 0.0);
    }
    return st;
}

void adamw_apply(ParamStore& params, AdamWState& state, const AdamWConfig& cfg, double lr) {
    if (state.m.size() != params.count()) throw std::invalid_argument("adamw_apply: state/params mismatch");
    check_grads_finite(params);

    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t pi = 0; pi < params.count(); ++pi) {
        auto& entry = params.entries()[pi];
        auto& w = entry.tensor.data();
        const auto& g = entry.tensor.grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        const bool has_g = entry.tensor.has_grad();
        for (size_t i = 0; i < w.size(); ++i) {
            const double gi = has_g ? g[i] : 0.0;
            m[i] = qz1(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi);
            v[i] = qz1(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double wi = w[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps);
            if (entry.decay) wi -= lr * cfg.weight_decay * w[i];
            w[i] = qz1(wi);
        }
    }
}

std::vector<std::vector<double>> sam_perturb(const ParamStore& params, double rho) {
    if (rho < 0.0) throw std::invalid_argument("sam_perturb: rho must be >= 0");
    const double norm = params.grad_global_norm();
    std::vector<std::vector<double>> eps;
    eps.reserve(params.count());
    const double factor = norm < 1e-12 ? 0.0 : rho / norm;
    for (const auto& e : params.entries()) {
        std::vector<double> row(static_cast<size_t>(e.tensor.size()), 0.0);
        if (factor != 0.0 && e.tensor.has_grad()) {
            const auto& g = e.tensor.grad();
            for (size_t i = 0; i < row.size(); ++i) row[i] = factor * g[i];
        }
        eps.push_back(std::move(row));
    }
    return eps;
}

StepResult sam_step(const std::function<Tensor()>& loss_fn, ParamStore& params, AdamWState& state,
                    const AdamWConfig& adamw_cfg, double lr, const SAMConfig& sam_cfg) {
    StepResult result;

    params.zero_grad();
    Tensor loss = loss_fn();
    result.passes = 1;
    result.loss = loss.item();
    if (!std::isfinite(result.loss)) throw std::runtime_error("sam_step: non-finite loss (first pass)");
    backward(loss);

    if (sam_cfg.rho == 0.0) {
        adamw_apply(params, state, adamw_cfg, lr);
        return result;
    }

    const auto eps_hat = sam_perturb(params, sam_cfg.rho);
    // Snapshot w so the restore is bitwise exact regardless of rounding in
    // w + eps.
    const auto snapshot = params.clone_values();
    for (size_t pi = 0; pi < params.count(); ++pi) {
        auto& w = params.entries()[pi].tensor.data();
        for (size_t i = 0; i < w.size(); ++i) w[i] = qz1(w[i] + eps_hat[pi][i]);
    }

    try {
        params.zero_grad();
        Tensor loss2 = loss_fn();
        result.passes = 2;
        if (!std::isfinite(loss2.item())) throw std::runtime_error("sam_step: non-finite loss (second pass)");
        backward(loss2);
        params.restore_values(snapshot);
        adamw_apply(params, state, adamw_cfg, lr);
    } catch (...) {
        params.restore_values(snapshot);
        throw;
    }
    return result;
}

}  // namespace cacophony
