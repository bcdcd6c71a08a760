#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dferc/tensor.hpp"

namespace dferc {

// One LSTM direction. Gate weights are packed along the output axis in the
// order input, forget, candidate, output (i, f, g, o).
struct LstmCell {
  Tensor wx;  // [in, 4h]
  Tensor wh;  // [h, 4h]
  Tensor b;   // [4h]
};

struct BiLstmParams {
  LstmCell fwd;
  LstmCell bwd;
  std::size_t in = 0;
  std::size_t hidden = 0;

  static BiLstmParams make(std::size_t in, std::size_t hidden, Rng& rng);
  void collect(const std::string& prefix,
               std::vector<std::pair<std::string, Tensor>>& out) const;
};

// Single step of one direction: returns (h, c).
std::pair<Tensor, Tensor> lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                                    const LstmCell& cell, std::size_t hidden);

// Bidirectional pass over a sequence of [in] vectors. Position i of the
// result is concat(forward state after seq[0..=i], backward state after
// reading seq[i..n-1] reversed), a [2h] vector.
std::vector<Tensor> bilstm_forward(std::span<const Tensor> seq, const BiLstmParams& p);

}  // namespace dferc
