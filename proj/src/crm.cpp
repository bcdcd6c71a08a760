#include "dferc/crm.hpp"

#include <algorithm>
#include <stdexcept>

#include "dferc/ddm.hpp"

namespace dferc {

void CrmConfig::validate() const {
  if (align_dim == 0) throw std::invalid_argument("crm: align_dim must be positive");
  if (margin_beta < 0.0) throw std::invalid_argument("crm: margin beta must be >= 0");
  if (context_hidden == 0) throw std::invalid_argument("crm: context_hidden must be positive");
}

PrototypeStore::PrototypeStore(std::size_t K, std::size_t dim)
    : sums_(K, std::vector<double>(dim, 0.0)), counts_(K, 0), dim_(dim) {}

void PrototypeStore::update(std::span<const std::pair<int, std::vector<double>>> batch) {
  for (const auto& [label, x] : batch) {
    if (label < 0 || static_cast<std::size_t>(label) >= sums_.size()) {
      throw std::invalid_argument("PrototypeStore: label out of range");
    }
    if (x.size() != dim_) throw std::invalid_argument("PrototypeStore: feature dim mismatch");
    auto& s = sums_[static_cast<std::size_t>(label)];
    for (std::size_t i = 0; i < dim_; ++i) s[i] += x[i];
    counts_[static_cast<std::size_t>(label)]++;
  }
  ++rounds_;
}

std::vector<double> PrototypeStore::prototype(std::size_t k) const {
  if (k >= sums_.size()) throw std::invalid_argument("PrototypeStore: class out of range");
  std::vector<double> p(dim_, 0.0);
  if (counts_[k] > 0) {
    double inv = 1.0 / static_cast<double>(counts_[k]);
    for (std::size_t i = 0; i < dim_; ++i) p[i] = sums_[k][i] * inv;
  }
  return p;
}

long PrototypeStore::count(std::size_t k) const {
  if (k >= counts_.size()) throw std::invalid_argument("PrototypeStore: class out of range");
  return counts_[k];
}

void PrototypeStore::restore(std::vector<std::vector<double>> sums, std::vector<long> counts,
                             long rounds) {
  if (sums.size() != counts.size()) throw std::invalid_argument("PrototypeStore: bad restore");
  dim_ = sums.empty() ? 0 : sums[0].size();
  for (const auto& s : sums) {
    if (s.size() != dim_) throw std::invalid_argument("PrototypeStore: ragged restore");
  }
  sums_ = std::move(sums);
  counts_ = std::move(counts);
  rounds_ = rounds;
}

CrmHeads CrmHeads::make(const std::array<std::size_t, 3>& feat_dims, std::size_t align_dim,
                        std::size_t head_hidden, std::size_t hidden_layers, Rng& rng) {
  CrmHeads h;
  std::vector<std::size_t> hidden(hidden_layers, head_hidden);
  for (int m = 0; m < kModalities; ++m) {
    h.align[m] = MlpParams::make(feat_dims[m], hidden, align_dim, rng);
  }
  return h;
}

void CrmHeads::collect(std::vector<std::pair<std::string, Tensor>>& out) const {
  for (int m = 0; m < kModalities; ++m) {
    align[m].collect(std::string("crm.align.") + kModalityNames[m], out);
  }
}

ModalityFeatures align_project(const ModalityFeatures& feats, const CrmHeads& heads) {
  ModalityFeatures x;
  for (int m = 0; m < kModalities; ++m) {
    x[m].reserve(feats[m].size());
    for (const auto& f : feats[m]) x[m].push_back(mlp_forward(f, heads.align[m]));
  }
  return x;
}

Tensor prototype_margin_loss(const PrototypeStore& store, const ModalityFeatures& x,
                             std::span<const int> gold, double beta) {
  std::size_t n = gold.size();
  if (x[0].size() != n) throw std::invalid_argument("prototype_margin_loss: length mismatch");
  std::vector<Tensor> hinges;
  hinges.reserve(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    auto k = static_cast<std::size_t>(gold[i]);
    // Cold start: a class the store has never ingested has no meaningful
    // prototype yet and is skipped.
    if (store.count(k) == 0) continue;
    Tensor proto = Tensor::of({store.dim()}, store.prototype(k));
    for (int m = 0; m < kModalities; ++m) {
      hinges.push_back(relu(affine_map(mse(x[m][i], proto), 1.0, -beta)));
    }
  }
  if (hinges.empty()) return Tensor::scalar(0.0);
  return scale(add_n(hinges), 1.0 / (3.0 * static_cast<double>(n)));
}

Tensor modality_consistency(const Tensor& xt, const Tensor& xa, const Tensor& xv, bool clamp) {
  Tensor psi = scale(
      add_n({cosine_sim(xt, xa), cosine_sim(xt, xv), cosine_sim(xa, xv)}), 1.0 / 3.0);
  if (clamp) {
    // relu clamps below at 0; the mirrored relu clamps above at 1.
    psi = affine_map(relu(affine_map(relu(psi), -1.0, 1.0)), -1.0, 1.0);
  }
  return psi;
}

Tensor refuse_context(const Tensor& hf, const Tensor& hc, const Tensor& psi) {
  if (!psi.is_scalar()) throw std::invalid_argument("refuse_context: psi must be a scalar");
  Tensor gate = affine_map(psi, -1.0, 1.0);  // 1 - psi
  return concat({hf, smul(gate, hc)});
}

Tensor refuse_context_static(const Tensor& hf, const Tensor& hc, double gate) {
  return concat({hf, scale(hc, gate)});
}

}  // namespace dferc
