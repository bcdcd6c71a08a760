#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "dferc/mlp.hpp"
#include "dferc/tensor.hpp"

namespace dferc {

// Modality index order used everywhere: 0 = text, 1 = audio, 2 = video.
inline constexpr int kModalities = 3;
inline constexpr const char* kModalityNames[3] = {"text", "audio", "video"};

struct DdmConfig {
  std::size_t proj_dim = 300;
  double tau_m = 0.5;  // modality-level contrastive temperature
  double tau_u = 0.3;  // utterance-level contrastive temperature
  // Anchor range for the contrastive sums. The interleaved lists have 3n
  // entries; by default every entry anchors. "first_n" restricts anchors to
  // the first n positions (the literal outer-sum bound).
  bool anchors_all = true;

  void validate() const;
};

// Position p of the interleaved list [t_0, a_0, v_0, t_1, ...] maps to
// (utterance p/3, modality p%3), 0-based.
std::pair<std::size_t, std::size_t> position_utt_modality(std::size_t pos);

// Positive sets per anchor. Positions are 0-based and the anchor is
// excluded from its own set.
std::vector<std::vector<std::size_t>> grouping_modality(std::size_t n);
std::vector<std::vector<std::size_t>> grouping_utterance(std::size_t n);

struct ContrastiveResult {
  Tensor loss;
  // Anchors whose positive set was empty (modality grouping at n = 1); they
  // contribute zero instead of erroring.
  int skipped_anchors = 0;
};

// Supervised contrastive loss over a precomputed similarity matrix
// sims:[m,m]. For each anchor a (optionally only the first anchor_limit
// positions) and each positive k:
//   loss += log-sum-exp_{j != a}(sims[a][j]/tau) - sims[a][k]/tau
ContrastiveResult contrastive_from_sims(const Tensor& sims,
                                        const std::vector<std::vector<std::size_t>>& positives,
                                        double tau,
                                        std::optional<std::size_t> anchor_limit = std::nullopt);

// Same loss over a list of vectors; similarities are cosine.
ContrastiveResult supervised_contrastive_loss(
    std::span<const Tensor> vectors, const std::vector<std::vector<std::size_t>>& positives,
    double tau, std::optional<std::size_t> anchor_limit = std::nullopt);

// Cosine similarity matrix of a list of equal-length vectors.
Tensor pairwise_cosine_matrix(std::span<const Tensor> vectors, double eps = 1e-12);

// Six projection heads: one per (level, modality).
struct DdmHeads {
  std::array<MlpParams, 3> mod;  // MLP^m_{t,a,v}
  std::array<MlpParams, 3> utt;  // MLP^u_{t,a,v}

  static DdmHeads make(const std::array<std::size_t, 3>& raw_dims, std::size_t proj_dim,
                       std::size_t hidden_layers, Rng& rng);
  void collect(std::vector<std::pair<std::string, Tensor>>& out) const;
};

// Raw inputs, both projection levels and the residual concatenations
// [raw; modality; utterance] for one dialogue.
struct DisentangledFeatures {
  std::size_t n = 0;
  std::array<std::vector<Tensor>, 3> raw;       // [modality][utterance]
  std::array<std::vector<Tensor>, 3> mod_proj;
  std::array<std::vector<Tensor>, 3> utt_proj;
  std::array<std::vector<Tensor>, 3> concat;

  // Interleaved projection lists [t_0, a_0, v_0, t_1, ...].
  std::vector<Tensor> interleaved_mod() const;
  std::vector<Tensor> interleaved_utt() const;
};

DisentangledFeatures project_dual(const std::array<std::vector<Tensor>, 3>& raw,
                                  const DdmHeads& heads);

struct DdmLossResult {
  Tensor total;
  Tensor modality;
  Tensor utterance;
  int skipped_anchors = 0;
};

// L_cl = modality-level + utterance-level contrastive loss on the
// respective projections.
DdmLossResult ddm_loss(const DisentangledFeatures& df, const DdmConfig& cfg);

}  // namespace dferc
