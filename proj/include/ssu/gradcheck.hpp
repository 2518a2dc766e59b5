/*
 * Copyright (c) 2026 The SSU Lab Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "ssu/tensor.hpp"

namespace ssu {

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares `analytic` against central differences (f(θ+h) - f(θ-h)) / 2h,
/// perturbing `params` in place and restoring them afterwards. `f` evaluates
/// the scalar objective at the current parameter values. The error of each
/// entry is |analytic - numeric| / max(|numeric|, 1e-8).
template <typename F>
GradcheckResult finite_diff_gradcheck(F&& f, std::span<Tensor<double>* const> params,
                                      std::span<const Tensor<double>> analytic, double h) {
  if (!(h > 0)) throw std::invalid_argument("gradcheck step must be positive");
  if (params.size() != analytic.size()) throw DimensionError("gradcheck: one analytic gradient per parameter");
  GradcheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& theta = *params[p];
    if (theta.shape() != analytic[p].shape()) throw DimensionError("gradcheck: gradient shape mismatch");
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const double up = f();
      theta[i] = saved - h;
      const double down = f();
      theta[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NonFiniteError("gradcheck: objective is not finite");
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[p][i] - numeric) / std::max(std::abs(numeric), 1e-8);
      if (err > result.max_rel_error) {
        result = {err, p, i, analytic[p][i], numeric};
      }
    }
  }
  return result;
}

}  // namespace ssu
