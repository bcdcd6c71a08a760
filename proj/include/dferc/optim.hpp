#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dferc/tensor.hpp"

namespace dferc {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  long warmup_steps = 100;  // linear warmup, then constant rate
};

// AdamW with decoupled weight decay and linear warmup.
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg);

  void zero_grad();
  // Global-norm clip over all parameter gradients; returns the pre-clip norm.
  double clip_global_norm(double max_norm);
  void step();

  long step_count() const { return t_; }
  double current_lr() const;

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

}  // namespace dferc
