#include "dferc/mlp.hpp"

#include <stdexcept>

namespace dferc {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation: " + name);
}

MlpParams MlpParams::make(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                          Rng& rng, Activation hidden_act, Activation out_act) {
  if (in == 0 || out == 0) throw std::invalid_argument("MlpParams: zero layer width");
  MlpParams p;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    if (h == 0) throw std::invalid_argument("MlpParams: zero hidden width");
    p.layers.push_back({Tensor::uniform_init({prev, h}, prev, rng),
                        Tensor::uniform_init({h}, prev, rng), hidden_act});
    prev = h;
  }
  p.layers.push_back({Tensor::uniform_init({prev, out}, prev, rng),
                      Tensor::uniform_init({out}, prev, rng), out_act});
  return p;
}

std::size_t MlpParams::in_dim() const {
  if (layers.empty()) throw std::logic_error("MlpParams: empty");
  return layers.front().w.dim(0);
}

std::size_t MlpParams::out_dim() const {
  if (layers.empty()) throw std::logic_error("MlpParams: empty");
  return layers.back().w.dim(1);
}

void MlpParams::validate() const {
  if (layers.empty()) throw std::invalid_argument("MlpParams: empty");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.w.shape().size() != 2 || l.b.shape().size() != 1 || l.b.size() != l.w.dim(1)) {
      throw std::invalid_argument("MlpParams: malformed layer " + std::to_string(i));
    }
    if (i > 0 && layers[i - 1].w.dim(1) != l.w.dim(0)) {
      throw std::invalid_argument("MlpParams: layer dims do not chain at layer " +
                                  std::to_string(i));
    }
  }
}

void MlpParams::collect(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.emplace_back(prefix + ".w" + std::to_string(i), layers[i].w);
    out.emplace_back(prefix + ".b" + std::to_string(i), layers[i].b);
  }
}

Tensor mlp_forward(const Tensor& x, const MlpParams& p) {
  if (p.layers.empty()) throw std::invalid_argument("mlp_forward: empty params");
  Tensor h = x;
  for (const auto& l : p.layers) {
    h = affine(h, l.w, l.b);
    switch (l.act) {
      case Activation::identity: break;
      case Activation::tanh: h = tanh(h); break;
      case Activation::relu: h = relu(h); break;
    }
  }
  return h;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  double keep = 1.0 - rate;
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng.bernoulli(rate) ? 0.0 : 1.0 / keep;
  return mul(x, Tensor::of(x.shape(), std::move(mask)));
}

}  // namespace dferc
