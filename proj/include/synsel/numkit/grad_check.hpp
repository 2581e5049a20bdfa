#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "synsel/numkit/param.hpp"

namespace synsel::numkit {

// A scalar objective over a set of parameters. Called with backward=true it
// must also accumulate d(objective)/d(param) into each ParamTensor::grad.
using Objective = std::function<double(bool backward)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the analytic gradient with central differences over every entry
// of every parameter. The relative error of one entry is
// |a - n| / max(|a|, |n|, 1e-12).
inline GradCheckResult grad_check_detailed(const Objective& f, const ParamList& params,
                                           double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw ConfigError("grad_check epsilon must lie in [1e-7, 1e-3], got " +
                      std::to_string(epsilon));
  }
  zero_grads(params);
  const double base = f(true);
  if (!std::isfinite(base)) throw NumericError("grad_check: objective is not finite");

  GradCheckResult result;
  for (ParamTensor* p : params) {
    const Matrix analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + epsilon;
      const double up = f(false);
      p->value[i] = saved - epsilon;
      const double down = f(false);
      p->value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: objective not finite when perturbing " + p->name);
      }
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result = GradCheckResult{rel, p->name, i, a, numeric};
      }
    }
  }
  zero_grads(params);
  return result;
}

inline double grad_check(const Objective& f, const ParamList& params, double epsilon) {
  return grad_check_detailed(f, params, epsilon).max_rel_error;
}

}  // namespace synsel::numkit
