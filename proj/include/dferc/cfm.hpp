#pragma once

#include <array>
#include <span>
#include <vector>

#include "dferc/mlp.hpp"
#include "dferc/tensor.hpp"

namespace dferc {

struct CfmConfig {
  std::size_t fusion_dim = 600;   // shared width of the per-modality adapters
  std::size_t head_hidden = 300;  // hidden width of teacher/student heads

  void validate() const;
};

// Per modality: a teacher classifier over K emotions and a scalar student
// that predicts the teacher's true-class probability.
struct CfmHeads {
  std::array<MlpParams, 3> teacher;  // MLP^q_{t,a,v}, output K
  std::array<MlpParams, 3> student;  // MLP^p_{t,a,v}, output 1

  static CfmHeads make(const std::array<std::size_t, 3>& feat_dims, std::size_t K,
                       std::size_t head_hidden, std::size_t hidden_layers, Rng& rng);
  void collect(std::vector<std::pair<std::string, Tensor>>& out) const;
};

using ModalityFeatures = std::array<std::vector<Tensor>, 3>;  // [modality][utterance]

// Softmaxed teacher distributions z^m_i over the K emotions.
ModalityFeatures teacher_distributions(const ModalityFeatures& feats, const CfmHeads& heads);

// TCP^m_i = z^m_i[gold_i], detached: these are constant regression targets,
// no gradient flows back into the teacher through them.
std::vector<std::array<double, 3>> tcp_targets(const ModalityFeatures& z,
                                               std::span<const int> gold);

// Contribution weights omega^m_i = sigmoid(student scalar), in (0,1).
ModalityFeatures contribution_weights(const ModalityFeatures& feats, const CfmHeads& heads);

// L_con = sum_m (L_p^m + L_q^m) with L_p the teacher cross-entropy over the
// dialogue and L_q the summed squared residual between omega and the frozen
// TCP targets.
Tensor cfm_loss(const ModalityFeatures& z, const std::vector<std::array<double, 3>>& tcp,
                const ModalityFeatures& omega, std::span<const int> gold);

// h^f_i = omega^t_i t_i + omega^a_i a_i + omega^v_i v_i. All three feature
// vectors must share one width.
std::vector<Tensor> fuse(const ModalityFeatures& feats, const ModalityFeatures& omega);
// Fixed-weight fusion (the "- CFM" ablation uses 1/3 each).
std::vector<Tensor> fuse_fixed(const ModalityFeatures& feats, const std::array<double, 3>& w);

}  // namespace dferc
