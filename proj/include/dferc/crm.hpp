#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "dferc/cfm.hpp"
#include "dferc/lstm.hpp"
#include "dferc/mlp.hpp"
#include "dferc/tensor.hpp"

namespace dferc {

struct CrmConfig {
  std::size_t align_dim = 500;
  double margin_beta = 0.1;
  std::size_t context_hidden = 300;
  bool clamp_psi = false;  // clamp psi into [0,1] before gating

  void validate() const;
};

// Running per-emotion mean of aligned features. Internally keeps sums and
// counts so the exposed prototype is the exact mean of everything ingested.
// Plain state outside the differentiation graph.
class PrototypeStore {
 public:
  PrototypeStore() = default;
  PrototypeStore(std::size_t K, std::size_t dim);

  // Ingests one batch of (gold label, aligned feature value). Classes absent
  // from the batch are unchanged; the round index advances by one.
  void update(std::span<const std::pair<int, std::vector<double>>> batch);

  std::vector<double> prototype(std::size_t k) const;  // zero vector while count is 0
  long count(std::size_t k) const;
  long round_index() const { return rounds_; }
  std::size_t K() const { return sums_.size(); }
  std::size_t dim() const { return dim_; }

  const std::vector<std::vector<double>>& sums() const { return sums_; }
  const std::vector<long>& counts() const { return counts_; }
  void restore(std::vector<std::vector<double>> sums, std::vector<long> counts, long rounds);

 private:
  std::vector<std::vector<double>> sums_;
  std::vector<long> counts_;
  std::size_t dim_ = 0;
  long rounds_ = 0;
};

struct CrmHeads {
  std::array<MlpParams, 3> align;  // MLP^r_{t,a,v}, shared output width

  static CrmHeads make(const std::array<std::size_t, 3>& feat_dims, std::size_t align_dim,
                       std::size_t head_hidden, std::size_t hidden_layers, Rng& rng);
  void collect(std::vector<std::pair<std::string, Tensor>>& out) const;
};

// x^m_i = MLP^r_m(feature), all modalities into the shared align space.
ModalityFeatures align_project(const ModalityFeatures& feats, const CrmHeads& heads);

// (1/3n) sum_i sum_m max(MSE(prototype[gold_i], x^m_i) - beta, 0). MSE is the
// mean squared difference over the align coordinates; prototypes are
// constants. Classes the store has never seen are skipped.
Tensor prototype_margin_loss(const PrototypeStore& store, const ModalityFeatures& x,
                             std::span<const int> gold, double beta);

// psi = mean pairwise cosine of the three aligned vectors of one utterance.
Tensor modality_consistency(const Tensor& xt, const Tensor& xa, const Tensor& xv,
                            bool clamp = false);

// h^e = [h^f ; h^c * (1 - psi)].
Tensor refuse_context(const Tensor& hf, const Tensor& hc, const Tensor& psi);
// Static-gate variant for the "- CRM" ablations: h^e = [h^f ; gate * h^c].
Tensor refuse_context_static(const Tensor& hf, const Tensor& hc, double gate);

}  // namespace dferc
