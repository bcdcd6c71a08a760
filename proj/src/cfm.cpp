#include "dferc/cfm.hpp"

#include <stdexcept>

#include "dferc/ddm.hpp"

namespace dferc {

void CfmConfig::validate() const {
  if (fusion_dim == 0) throw std::invalid_argument("cfm: fusion_dim must be positive");
  if (head_hidden == 0) throw std::invalid_argument("cfm: head_hidden must be positive");
}

CfmHeads CfmHeads::make(const std::array<std::size_t, 3>& feat_dims, std::size_t K,
                        std::size_t head_hidden, std::size_t hidden_layers, Rng& rng) {
  if (K < 2) throw std::invalid_argument("cfm: K must be >= 2");
  CfmHeads h;
  std::vector<std::size_t> hidden(hidden_layers, head_hidden);
  for (int m = 0; m < kModalities; ++m) {
    h.teacher[m] = MlpParams::make(feat_dims[m], hidden, K, rng);
    h.student[m] = MlpParams::make(feat_dims[m], hidden, 1, rng);
  }
  return h;
}

void CfmHeads::collect(std::vector<std::pair<std::string, Tensor>>& out) const {
  for (int m = 0; m < kModalities; ++m) {
    teacher[m].collect(std::string("cfm.teacher.") + kModalityNames[m], out);
    student[m].collect(std::string("cfm.student.") + kModalityNames[m], out);
  }
}

ModalityFeatures teacher_distributions(const ModalityFeatures& feats, const CfmHeads& heads) {
  ModalityFeatures z;
  for (int m = 0; m < kModalities; ++m) {
    z[m].reserve(feats[m].size());
    for (const auto& x : feats[m]) z[m].push_back(softmax(mlp_forward(x, heads.teacher[m])));
  }
  return z;
}

std::vector<std::array<double, 3>> tcp_targets(const ModalityFeatures& z,
                                               std::span<const int> gold) {
  std::size_t n = z[0].size();
  if (gold.size() != n) throw std::invalid_argument("tcp_targets: gold length mismatch");
  std::vector<std::array<double, 3>> tcp(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (gold[i] < 0 || static_cast<std::size_t>(gold[i]) >= z[0][i].size()) {
      throw std::invalid_argument("tcp_targets: gold index out of range");
    }
    for (int m = 0; m < kModalities; ++m) {
      tcp[i][m] = z[m][i].at(static_cast<std::size_t>(gold[i]));
    }
  }
  return tcp;
}

ModalityFeatures contribution_weights(const ModalityFeatures& feats, const CfmHeads& heads) {
  ModalityFeatures omega;
  for (int m = 0; m < kModalities; ++m) {
    omega[m].reserve(feats[m].size());
    for (const auto& x : feats[m]) {
      omega[m].push_back(sigmoid(mlp_forward(x, heads.student[m])));
    }
  }
  return omega;
}

Tensor cfm_loss(const ModalityFeatures& z, const std::vector<std::array<double, 3>>& tcp,
                const ModalityFeatures& omega, std::span<const int> gold) {
  std::size_t n = gold.size();
  if (z[0].size() != n || omega[0].size() != n || tcp.size() != n) {
    throw std::invalid_argument("cfm_loss: inconsistent lengths");
  }
  std::vector<Tensor> terms;
  terms.reserve(6 * n);
  for (int m = 0; m < kModalities; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      // L_p: teacher cross-entropy on the gold emotion.
      Tensor p_gold = pick(z[m][i], static_cast<std::size_t>(gold[i]));
      terms.push_back(affine_map(log_clamped(p_gold), -1.0, 0.0));
      // L_q: squared residual to the frozen TCP target.
      Tensor r = affine_map(omega[m][i], 1.0, -tcp[i][m]);
      terms.push_back(mul(r, r));
    }
  }
  return add_n(terms);
}

std::vector<Tensor> fuse(const ModalityFeatures& feats, const ModalityFeatures& omega) {
  std::size_t n = feats[0].size();
  std::size_t d = n > 0 ? feats[0][0].size() : 0;
  for (int m = 0; m < kModalities; ++m) {
    if (feats[m].size() != n || omega[m].size() != n) {
      throw std::invalid_argument("fuse: inconsistent lengths");
    }
    for (const auto& x : feats[m]) {
      if (x.size() != d) {
        throw std::invalid_argument("fuse: fused inputs must share one width, got " +
                                    shape_str(x.shape()) + " vs dim " + std::to_string(d));
      }
    }
  }
  std::vector<Tensor> fused;
  fused.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    fused.push_back(add_n({smul(omega[0][i], feats[0][i]), smul(omega[1][i], feats[1][i]),
                           smul(omega[2][i], feats[2][i])}));
  }
  return fused;
}

std::vector<Tensor> fuse_fixed(const ModalityFeatures& feats, const std::array<double, 3>& w) {
  std::size_t n = feats[0].size();
  std::size_t d = n > 0 ? feats[0][0].size() : 0;
  for (int m = 0; m < kModalities; ++m) {
    for (const auto& x : feats[m]) {
      if (x.size() != d) throw std::invalid_argument("fuse_fixed: fused inputs must share one width");
    }
  }
  std::vector<Tensor> fused;
  fused.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    fused.push_back(add_n({scale(feats[0][i], w[0]), scale(feats[1][i], w[1]),
                           scale(feats[2][i], w[2])}));
  }
  return fused;
}

}  // namespace dferc
