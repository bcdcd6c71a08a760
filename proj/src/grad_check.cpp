#include "dferc/grad_check.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace dferc {

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::span<const std::pair<std::string, Tensor>> params, double eps) {
  if (eps <= 0.0 || eps > 1e-2) throw std::invalid_argument("grad_check: eps must be in (0, 1e-2]");

  for (const auto& [name, p] : params) {
    if (!p.requires_grad()) {
      throw std::invalid_argument("grad_check: parameter '" + name + "' does not require grad");
    }
    const_cast<Tensor&>(p).zero_grad();
  }

  Tensor y = f();
  if (!y.is_scalar()) throw std::invalid_argument("grad_check: f must return a scalar");
  if (!std::isfinite(y.item())) throw std::runtime_error("grad_check: f is non-finite at base point");
  y.backward();

  std::vector<std::vector<double>> ad;
  ad.reserve(params.size());
  for (const auto& [name, p] : params) {
    auto g = p.grad();
    ad.emplace_back(g.begin(), g.end());
    if (ad.back().size() != p.size()) ad.back().assign(p.size(), 0.0);
  }

  auto eval = [&]() -> double {
    NoGradGuard ng;
    Tensor v = f();
    double out = v.item();
    if (!std::isfinite(out)) throw std::runtime_error("grad_check: f is non-finite at perturbed point");
    return out;
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi].second;
    auto vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double saved = vals[i];
      vals[i] = saved + eps;
      double fp = eval();
      vals[i] = saved - eps;
      double fm = eval();
      vals[i] = saved;
      double fd = (fp - fm) / (2.0 * eps);
      double g = ad[pi][i];
      double abs_err = std::fabs(g - fd);
      double rel = abs_err / std::max({std::fabs(g), std::fabs(fd), 1e-8});
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.max_abs_err = abs_err;
        report.worst_param = params[pi].first;
        report.worst_index = i;
        report.worst_ad = g;
        report.worst_fd = fd;
      }
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                           double eps) {
  std::vector<std::pair<std::string, Tensor>> named;
  named.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    named.emplace_back("p" + std::to_string(i), params[i]);
  }
  return grad_check(f, named, eps);
}

}  // namespace dferc
