#include "dferc/ddm.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dferc {

void DdmConfig::validate() const {
  if (proj_dim == 0) throw std::invalid_argument("ddm: proj_dim must be positive");
  if (tau_m <= 0.0 || tau_u <= 0.0) throw std::invalid_argument("ddm: temperatures must be > 0");
}

std::pair<std::size_t, std::size_t> position_utt_modality(std::size_t pos) {
  return {pos / 3, pos % 3};
}

std::vector<std::vector<std::size_t>> grouping_modality(std::size_t n) {
  std::vector<std::vector<std::size_t>> pos(3 * n);
  for (std::size_t i = 0; i < 3 * n; ++i) {
    for (std::size_t j = i % 3; j < 3 * n; j += 3) {
      if (j != i) pos[i].push_back(j);
    }
  }
  return pos;
}

std::vector<std::vector<std::size_t>> grouping_utterance(std::size_t n) {
  std::vector<std::vector<std::size_t>> pos(3 * n);
  for (std::size_t i = 0; i < 3 * n; ++i) {
    std::size_t base = (i / 3) * 3;
    for (std::size_t j = base; j < base + 3; ++j) {
      if (j != i) pos[i].push_back(j);
    }
  }
  return pos;
}

ContrastiveResult contrastive_from_sims(const Tensor& sims,
                                        const std::vector<std::vector<std::size_t>>& positives,
                                        double tau, std::optional<std::size_t> anchor_limit) {
  if (sims.shape().size() != 2 || sims.dim(0) != sims.dim(1)) {
    throw std::invalid_argument("contrastive_from_sims: sims must be square");
  }
  if (tau <= 0.0) throw std::invalid_argument("contrastive_from_sims: tau must be > 0");
  const std::size_t m = sims.dim(0);
  if (m < 2) throw std::invalid_argument("contrastive_from_sims: need at least 2 entries");
  if (positives.size() != m) {
    throw std::invalid_argument("contrastive_from_sims: positive sets size mismatch");
  }
  std::size_t anchors = anchor_limit.value_or(m);
  if (anchors > m) throw std::invalid_argument("contrastive_from_sims: anchor_limit out of range");

  auto sv = sims.values();
  double loss = 0.0;
  int skipped = 0;
  // Gradient of the loss w.r.t. the similarity matrix, precomputed here and
  // scaled by the root adjoint in backprop.
  std::vector<double> dsim(m * m, 0.0);
  for (std::size_t a = 0; a < anchors; ++a) {
    const auto& pos = positives[a];
    if (pos.empty()) {
      ++skipped;
      continue;
    }
    const double* row = sv.data() + a * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (j != a) mx = std::max(mx, row[j] / tau);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != a) z += std::exp(row[j] / tau - mx);
    }
    double lse = mx + std::log(z);
    double npos = static_cast<double>(pos.size());
    for (std::size_t k : pos) {
      if (k >= m || k == a) {
        throw std::invalid_argument("contrastive_from_sims: invalid positive index");
      }
      loss += lse - row[k] / tau;
      dsim[a * m + k] -= 1.0 / tau;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (j != a) dsim[a * m + j] += npos * std::exp(row[j] / tau - lse) / tau;
    }
  }

  Tensor out = detail::make_op(
      Shape{1}, {loss}, {sims},
      [dsim = std::move(dsim)](detail::TensorNode& self) {
        auto& adj = detail::scatter_adjoint(*self.parents[0]);
        double g = self.adjoint[0];
        for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g * dsim[i];
      },
      "contrastive");
  return {out, skipped};
}

Tensor pairwise_cosine_matrix(std::span<const Tensor> vectors, double eps) {
  return gram(normalize_rows(stack_rows(vectors), eps));
}

ContrastiveResult supervised_contrastive_loss(
    std::span<const Tensor> vectors, const std::vector<std::vector<std::size_t>>& positives,
    double tau, std::optional<std::size_t> anchor_limit) {
  if (vectors.size() < 2) {
    throw std::invalid_argument("supervised_contrastive_loss: need at least 2 vectors");
  }
  return contrastive_from_sims(pairwise_cosine_matrix(vectors), positives, tau, anchor_limit);
}

DdmHeads DdmHeads::make(const std::array<std::size_t, 3>& raw_dims, std::size_t proj_dim,
                        std::size_t hidden_layers, Rng& rng) {
  DdmHeads h;
  std::vector<std::size_t> hidden(hidden_layers, proj_dim);
  for (int m = 0; m < kModalities; ++m) {
    h.mod[m] = MlpParams::make(raw_dims[m], hidden, proj_dim, rng);
    h.utt[m] = MlpParams::make(raw_dims[m], hidden, proj_dim, rng);
  }
  return h;
}

void DdmHeads::collect(std::vector<std::pair<std::string, Tensor>>& out) const {
  for (int m = 0; m < kModalities; ++m) {
    mod[m].collect(std::string("ddm.mod.") + kModalityNames[m], out);
    utt[m].collect(std::string("ddm.utt.") + kModalityNames[m], out);
  }
}

DisentangledFeatures project_dual(const std::array<std::vector<Tensor>, 3>& raw,
                                  const DdmHeads& heads) {
  std::size_t n = raw[0].size();
  if (n == 0) throw std::invalid_argument("project_dual: empty dialogue");
  if (raw[1].size() != n || raw[2].size() != n) {
    throw std::invalid_argument("project_dual: modality lists differ in length");
  }
  DisentangledFeatures df;
  df.n = n;
  df.raw = raw;
  for (int m = 0; m < kModalities; ++m) {
    df.mod_proj[m].reserve(n);
    df.utt_proj[m].reserve(n);
    df.concat[m].reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor hm = mlp_forward(raw[m][i], heads.mod[m]);
      Tensor hu = mlp_forward(raw[m][i], heads.utt[m]);
      df.mod_proj[m].push_back(hm);
      df.utt_proj[m].push_back(hu);
      df.concat[m].push_back(concat({raw[m][i], hm, hu}));
    }
  }
  return df;
}

namespace {
std::vector<Tensor> interleave(const std::array<std::vector<Tensor>, 3>& by_modality,
                               std::size_t n) {
  std::vector<Tensor> out;
  out.reserve(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int m = 0; m < kModalities; ++m) out.push_back(by_modality[m][i]);
  }
  return out;
}
}  // namespace

std::vector<Tensor> DisentangledFeatures::interleaved_mod() const {
  return interleave(mod_proj, n);
}

std::vector<Tensor> DisentangledFeatures::interleaved_utt() const {
  return interleave(utt_proj, n);
}

DdmLossResult ddm_loss(const DisentangledFeatures& df, const DdmConfig& cfg) {
  cfg.validate();
  std::optional<std::size_t> limit;
  if (!cfg.anchors_all) limit = df.n;

  auto mod_vectors = df.interleaved_mod();
  auto utt_vectors = df.interleaved_utt();
  DdmLossResult r;
  // At n = 1 every modality-level positive set is empty; those anchors are
  // skipped and the component comes out zero.
  auto mod = supervised_contrastive_loss(mod_vectors, grouping_modality(df.n), cfg.tau_m, limit);
  r.modality = mod.loss;
  r.skipped_anchors += mod.skipped_anchors;
  auto utt = supervised_contrastive_loss(utt_vectors, grouping_utterance(df.n), cfg.tau_u, limit);
  r.utterance = utt.loss;
  r.skipped_anchors += utt.skipped_anchors;
  r.total = add(r.modality, r.utterance);
  return r;
}

}  // namespace dferc
