#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dferc/tensor.hpp"

namespace dferc {

enum class Activation { identity, tanh, relu };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct MlpLayer {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
  Activation act = Activation::identity;
};

// Feed-forward head. Hidden layers use tanh, the output layer is identity;
// softmax / sigmoid are applied by the caller where a model equation says so.
struct MlpParams {
  std::vector<MlpLayer> layers;

  static MlpParams make(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                        Rng& rng, Activation hidden_act = Activation::tanh,
                        Activation out_act = Activation::identity);

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  // Verifies that consecutive layer dimensions chain; throws otherwise.
  void validate() const;
  void collect(const std::string& prefix,
               std::vector<std::pair<std::string, Tensor>>& out) const;
};

Tensor mlp_forward(const Tensor& x, const MlpParams& p);

// Inverted dropout: elementwise multiply with a 0 / (1/(1-rate)) mask drawn
// from rng. rate == 0 returns x unchanged.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace dferc
