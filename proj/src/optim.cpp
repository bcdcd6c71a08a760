#include "dferc/optim.hpp"

#include <cmath>

namespace dferc {

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

double AdamW::clip_global_norm(double max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : params_) {
    for (double g : p.mutable_grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (auto& [name, p] : params_) {
      for (double& g : p.mutable_grad()) g *= s;
    }
  }
  return norm;
}

double AdamW::current_lr() const {
  long t = t_ + 1;  // rate that the next step will use
  if (cfg_.warmup_steps > 0 && t < cfg_.warmup_steps) {
    return cfg_.lr * static_cast<double>(t) / static_cast<double>(cfg_.warmup_steps);
  }
  return cfg_.lr;
}

void AdamW::step() {
  double lr_t = current_lr();
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto vals = params_[pi].second.mutable_values();
    auto grads = params_[pi].second.mutable_grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double g = grads[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      vals[i] -= lr_t * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * vals[i]);
    }
  }
}

}  // namespace dferc
