#pragma once

#include <functional>

#include "cacophony/params.hpp"
#include "cacophony/tensor.hpp"

namespace cacophony {

// Compares the reverse-mode gradient of fn at `point` against central finite
// differences (f(x+h) - f(x-h)) / 2h, coordinate by coordinate. Returns the
// worst relative error with denominator max(|analytic|, |numeric|, 1e-8).
// Requires f64 mode; finite differences are meaningless at float32.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double step = 1e-5);

// Same check against every coordinate of every tensor in a ParamStore, for
// end-to-end losses over a whole model. Each coordinate scores the best of
// the candidate step sizes: near-zero gradients need a large step to beat
// the roundoff floor |f|*eps/h while high-curvature coordinates need a small
// one. max_coords_per_tensor = 0 sweeps all coordinates.
double grad_check_params(const std::function<Tensor()>& loss_fn, ParamStore& params,
                         const std::vector<double>& steps = {1e-5}, int64_t max_coords_per_tensor = 0,
                         uint64_t subsample_seed = 0);

}  // namespace cacophony
