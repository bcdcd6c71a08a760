#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>

#include "dferc/tensor.hpp"

namespace dferc {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_ad = 0.0;
  double worst_fd = 0.0;
};

// Compares the reverse-mode gradient of the scalar f() against central
// differences per parameter coordinate. f must rebuild its graph on every
// call and read the current parameter values. Relative error uses the
// denominator max(|g_ad|, |g_fd|, 1e-8). Throws if f evaluates to a
// non-finite value at any perturbed point.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::span<const std::pair<std::string, Tensor>> params,
                           double eps = 1e-5);

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                           double eps = 1e-5);

}  // namespace dferc
