#include "dferc/lstm.hpp"

#include <stdexcept>

namespace dferc {

BiLstmParams BiLstmParams::make(std::size_t in, std::size_t hidden, Rng& rng) {
  if (in == 0 || hidden == 0) throw std::invalid_argument("BiLstmParams: zero dimension");
  auto make_cell = [&](void) -> LstmCell {
    return {Tensor::uniform_init({in, 4 * hidden}, in, rng),
            Tensor::uniform_init({hidden, 4 * hidden}, hidden, rng),
            Tensor::uniform_init({4 * hidden}, hidden, rng)};
  };
  BiLstmParams p;
  p.fwd = make_cell();
  p.bwd = make_cell();
  p.in = in;
  p.hidden = hidden;
  return p;
}

void BiLstmParams::collect(const std::string& prefix,
                           std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".fwd.wx", fwd.wx);
  out.emplace_back(prefix + ".fwd.wh", fwd.wh);
  out.emplace_back(prefix + ".fwd.b", fwd.b);
  out.emplace_back(prefix + ".bwd.wx", bwd.wx);
  out.emplace_back(prefix + ".bwd.wh", bwd.wh);
  out.emplace_back(prefix + ".bwd.b", bwd.b);
}

std::pair<Tensor, Tensor> lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                                    const LstmCell& cell, std::size_t hidden) {
  Tensor z = add(affine(x, cell.wx, cell.b), linear(h_prev, cell.wh));
  Tensor i = sigmoid(slice(z, 0, hidden));
  Tensor f = sigmoid(slice(z, hidden, hidden));
  Tensor g = tanh(slice(z, 2 * hidden, hidden));
  Tensor o = sigmoid(slice(z, 3 * hidden, hidden));
  Tensor c = add(mul(f, c_prev), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {h, c};
}

std::vector<Tensor> bilstm_forward(std::span<const Tensor> seq, const BiLstmParams& p) {
  if (seq.empty()) throw std::invalid_argument("bilstm_forward: empty sequence");
  for (const auto& x : seq) {
    if (x.shape().size() != 1 || x.size() != p.in) {
      throw std::invalid_argument("bilstm_forward: input dim " + shape_str(x.shape()) +
                                  " does not match cell input " + std::to_string(p.in));
    }
  }
  std::size_t n = seq.size();
  std::vector<Tensor> fwd(n), bwd(n);
  Tensor h = Tensor::zeros({p.hidden});
  Tensor c = Tensor::zeros({p.hidden});
  for (std::size_t i = 0; i < n; ++i) {
    auto [hn, cn] = lstm_step(seq[i], h, c, p.fwd, p.hidden);
    fwd[i] = hn;
    h = hn;
    c = cn;
  }
  h = Tensor::zeros({p.hidden});
  c = Tensor::zeros({p.hidden});
  for (std::size_t i = n; i-- > 0;) {
    auto [hn, cn] = lstm_step(seq[i], h, c, p.bwd, p.hidden);
    bwd[i] = hn;
    h = hn;
    c = cn;
  }
  std::vector<Tensor> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = concat({fwd[i], bwd[i]});
  return out;
}

}  // namespace dferc
