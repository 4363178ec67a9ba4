#include "cacophony/gradcheck.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "cacophony/rng.hpp"

namespace cacophony {

namespace {

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

void require_f64(const char* what) {
    if (precision() != Precision::f64)
        throw std::runtime_error(std::string(what) + ": requires f64 precision mode");
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double step) {
    require_f64("grad_check");

    Tensor x = Tensor::from(point.shape(), point.data(), true);
    Tensor loss = fn(x);
    if (loss.size() != 1) throw std::invalid_argument("grad_check: fn must return a scalar");
    if (!std::isfinite(loss.item())) throw std::runtime_error("grad_check: non-finite fn value");
    backward(loss);
    const std::vector<double> analytic = x.grad();

    double worst = 0.0;
    Tensor probe = Tensor::from(point.shape(), point.data(), false);
    for (int64_t i = 0; i < probe.size(); ++i) {
        const double orig = probe.data()[static_cast<size_t>(i)];
        probe.data()[static_cast<size_t>(i)] = orig + step;
        const double fp = fn(probe).item();
        probe.data()[static_cast<size_t>(i)] = orig - step;
        const double fm = fn(probe).item();
        probe.data()[static_cast<size_t>(i)] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw std::runtime_error("grad_check: non-finite fn value");
        const double numeric = (fp - fm) / (2.0 * step);
        worst = std::max(worst, rel_err(analytic[static_cast<size_t>(i)], numeric));
    }
    return worst;
}

double grad_check_params(const std::function<Tensor()>& loss_fn, ParamStore& params,
                         const std::vector<double>& steps, int64_t max_coords_per_tensor,
                         uint64_t subsample_seed) {
    require_f64("grad_check_params");
    if (steps.empty()) throw std::invalid_argument("grad_check_params: no step sizes");

    params.zero_grad();
    Tensor loss = loss_fn();
    if (!std::isfinite(loss.item())) throw std::runtime_error("grad_check_params: non-finite loss");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.count());
    for (auto& e : params.entries()) analytic.push_back(e.tensor.grad());

    double worst = 0.0;
    Rng rng(subsample_seed);
    for (size_t ti = 0; ti < params.count(); ++ti) {
        Tensor& t = params.entries()[ti].tensor;
        std::vector<int64_t> coords;
        if (max_coords_per_tensor > 0 && t.size() > max_coords_per_tensor) {
            auto picked = rng.sample_without_replacement(static_cast<int>(t.size()),
                                                         static_cast<int>(max_coords_per_tensor));
            coords.assign(picked.begin(), picked.end());
        } else {
            coords.resize(static_cast<size_t>(t.size()));
            for (int64_t i = 0; i < t.size(); ++i) coords[static_cast<size_t>(i)] = i;
        }
        for (int64_t i : coords) {
            double& slot = t.data()[static_cast<size_t>(i)];
            const double orig = slot;
            const double a = analytic[ti][static_cast<size_t>(i)];
            double best = std::numeric_limits<double>::infinity();
            for (double step : steps) {
                slot = orig + step;
                const double fp = loss_fn().item();
                slot = orig - step;
                const double fm = loss_fn().item();
                slot = orig;
                if (!std::isfinite(fp) || !std::isfinite(fm))
                    throw std::runtime_error("grad_check_params: non-finite loss");
                best = std::min(best, rel_err(a, (fp - fm) / (2.0 * step)));
                if (best < 1e-4) break;
            }
            worst = std::max(worst, best);
        }
    }
    return worst;
}

}  // namespace cacophony
