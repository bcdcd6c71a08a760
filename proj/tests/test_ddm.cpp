#include <doctest.h>

#include <cmath>
#include <vector>

#include "dferc/ddm.hpp"
#include "dferc/grad_check.hpp"

using namespace dferc;

namespace {

Tensor random_vec(std::size_t d, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return Tensor::of({d}, std::move(v), requires_grad);
}

// Direct summation of the contrastive formula on plain doubles; cosine
// similarities computed from scratch.
double contrastive_oracle(const std::vector<std::vector<double>>& vecs,
                          const std::vector<std::vector<std::size_t>>& positives, double tau,
                          std::size_t anchors) {
  auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    double na = std::sqrt(aa), nb = std::sqrt(bb);
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    return ab / (na * nb);
  };
  double loss = 0.0;
  for (std::size_t a = 0; a < anchors; ++a) {
    for (std::size_t k : positives[a]) {
      double denom = 0.0;
      for (std::size_t j = 0; j < vecs.size(); ++j) {
        if (j != a) denom += std::exp(cos(vecs[a], vecs[j]) / tau);
      }
      loss -= std::log(std::exp(cos(vecs[a], vecs[k]) / tau) / denom);
    }
  }
  return loss;
}

std::vector<std::vector<double>> values_of(const std::vector<Tensor>& ts) {
  std::vector<std::vector<double>> out;
  for (const auto& t : ts) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

}  // namespace

TEST_CASE("interleaved position maps to (utterance, modality)") {
  CHECK(position_utt_modality(0) == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(position_utt_modality(4) == std::pair<std::size_t, std::size_t>{1, 1});  // audio of u1
  CHECK(position_utt_modality(8) == std::pair<std::size_t, std::size_t>{2, 2});
}

TEST_CASE("modality grouping") {
  SUBCASE("n=2, i=0") {
    auto pos = grouping_modality(2);
    CHECK(pos[0] == std::vector<std::size_t>{3});
  }
  SUBCASE("n=3, i=4") {
    auto pos = grouping_modality(3);
    CHECK(pos[4] == std::vector<std::size_t>{1, 7});
  }
  SUBCASE("every position has n-1 positives") {
    for (std::size_t n : {1, 2, 3, 5, 8}) {
      auto pos = grouping_modality(n);
      REQUIRE(pos.size() == 3 * n);
      for (std::size_t i = 0; i < 3 * n; ++i) {
        CHECK(pos[i].size() == n - 1);
        for (std::size_t j : pos[i]) {
          CHECK(j % 3 == i % 3);
          CHECK(j != i);
        }
      }
    }
  }
}

TEST_CASE("utterance grouping") {
  SUBCASE("i=0 pairs with the rest of its utterance") {
    for (std::size_t n : {1, 2, 4}) {
      auto pos = grouping_utterance(n);
      CHECK(pos[0] == std::vector<std::size_t>{1, 2});
    }
  }
  SUBCASE("n=2, i=5") {
    auto pos = grouping_utterance(2);
    CHECK(pos[5] == std::vector<std::size_t>{3, 4});
  }
  SUBCASE("every position has exactly 2 positives") {
    for (std::size_t n : {1, 2, 3, 7}) {
      auto pos = grouping_utterance(n);
      for (std::size_t i = 0; i < 3 * n; ++i) {
        CHECK(pos[i].size() == 2);
        for (std::size_t j : pos[i]) CHECK(j / 3 == i / 3);
      }
    }
  }
}

TEST_CASE("all-identical vectors hit the closed-form symmetry value") {
  // Every softmax ratio collapses to 1/(3n-1).
  const std::size_t n = 2;
  std::vector<Tensor> vecs(3 * n, Tensor::of({3}, {0.4, -1.0, 0.2}));
  auto mod = supervised_contrastive_loss(vecs, grouping_modality(n), 0.5);
  CHECK(mod.loss.item() == doctest::Approx(6.0 * std::log(5.0)).epsilon(1e-9));
  CHECK(mod.loss.item() == doctest::Approx(9.65663).epsilon(1e-5));
  auto utt = supervised_contrastive_loss(vecs, grouping_utterance(n), 0.3);
  CHECK(utt.loss.item() == doctest::Approx(12.0 * std::log(5.0)).epsilon(1e-9));
  CHECK(utt.loss.item() == doctest::Approx(19.31327).epsilon(1e-5));
}

TEST_CASE("constructed cosine pattern matches the direct-summation oracle") {
  // Two utterances in 2-D: within-utterance pairs at cos 1, cross pairs at 0.
  std::vector<Tensor> vecs;
  for (int i = 0; i < 3; ++i) vecs.push_back(Tensor::of({2}, {2.0, 0.0}));
  for (int i = 0; i < 3; ++i) vecs.push_back(Tensor::of({2}, {0.0, 0.5}));
  auto got = supervised_contrastive_loss(vecs, grouping_utterance(2), 0.5);
  double expect = contrastive_oracle(values_of(vecs), grouping_utterance(2), 0.5, 6);
  CHECK(std::fabs(got.loss.item() - expect) < 1e-10);
}

TEST_CASE("random dialogues match the direct-summation oracle") {
  Rng rng(44);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n = 2 + rng.below(3);
    std::vector<Tensor> vecs;
    for (std::size_t i = 0; i < 3 * n; ++i) vecs.push_back(random_vec(5, rng, false));
    for (double tau : {0.5, 0.3, 1.7}) {
      auto mod = supervised_contrastive_loss(vecs, grouping_modality(n), tau);
      CHECK(std::fabs(mod.loss.item() -
                      contrastive_oracle(values_of(vecs), grouping_modality(n), tau, 3 * n)) <
            1e-10);
      auto utt = supervised_contrastive_loss(vecs, grouping_utterance(n), tau);
      CHECK(std::fabs(utt.loss.item() -
                      contrastive_oracle(values_of(vecs), grouping_utterance(n), tau, 3 * n)) <
            1e-10);
    }
  }
}

TEST_CASE("anchor limit restricts the outer sum") {
  Rng rng(45);
  const std::size_t n = 3;
  std::vector<Tensor> vecs;
  for (std::size_t i = 0; i < 3 * n; ++i) vecs.push_back(random_vec(4, rng, false));
  auto limited = supervised_contrastive_loss(vecs, grouping_modality(n), 0.5, n);
  double expect = contrastive_oracle(values_of(vecs), grouping_modality(n), 0.5, n);
  CHECK(std::fabs(limited.loss.item() - expect) < 1e-10);
}

TEST_CASE("zero vectors give the degenerate symmetry formula") {
  // Cosine is defined 0 for zero vectors, so every similarity is equal and
  // each component is 3n * |pos| * ln(3n-1).
  for (std::size_t n : {2, 3}) {
    std::vector<Tensor> vecs(3 * n, Tensor::zeros({4}));
    double ln = std::log(static_cast<double>(3 * n - 1));
    auto mod = supervised_contrastive_loss(vecs, grouping_modality(n), 0.5);
    CHECK(mod.loss.item() == doctest::Approx(3.0 * n * (n - 1.0) * ln).epsilon(1e-9));
    auto utt = supervised_contrastive_loss(vecs, grouping_utterance(n), 0.3);
    CHECK(utt.loss.item() == doctest::Approx(3.0 * n * 2.0 * ln).epsilon(1e-9));
  }
}

TEST_CASE("single-utterance dialogues keep a finite loss") {
  Rng rng(46);
  std::array<std::vector<Tensor>, 3> raw;
  for (int m = 0; m < 3; ++m) raw[m].push_back(random_vec(4, rng, false));
  DdmHeads heads = DdmHeads::make({4, 4, 4}, 5, 1, rng);
  DisentangledFeatures df = project_dual(raw, heads);
  CHECK(df.interleaved_mod().size() == 3);
  DdmConfig cfg;
  cfg.proj_dim = 5;
  auto r = ddm_loss(df, cfg);
  CHECK(r.modality.item() == 0.0);  // empty positive sets contribute zero
  CHECK(r.skipped_anchors == 3);    // and are counted
  CHECK(r.utterance.item() > 0.0);
  CHECK(std::isfinite(r.total.item()));
}

TEST_CASE("ddm_loss equals the sum of its two components") {
  Rng rng(47);
  const std::size_t n = 3;
  std::array<std::vector<Tensor>, 3> raw;
  for (int m = 0; m < 3; ++m) {
    for (std::size_t i = 0; i < n; ++i) raw[m].push_back(random_vec(6, rng, false));
  }
  DdmHeads heads = DdmHeads::make({6, 6, 6}, 4, 1, rng);
  DisentangledFeatures df = project_dual(raw, heads);
  DdmConfig cfg;
  cfg.proj_dim = 4;
  auto r = ddm_loss(df, cfg);
  auto mod = supervised_contrastive_loss(df.interleaved_mod(), grouping_modality(n), cfg.tau_m);
  auto utt = supervised_contrastive_loss(df.interleaved_utt(), grouping_utterance(n), cfg.tau_u);
  CHECK(r.total.item() == doctest::Approx(mod.loss.item() + utt.loss.item()).epsilon(1e-15));
}

TEST_CASE("projection shapes and residual concatenation") {
  Rng rng(48);
  const std::size_t n = 2, proj = 5;
  std::array<std::size_t, 3> dims = {7, 4, 3};
  std::array<std::vector<Tensor>, 3> raw;
  for (int m = 0; m < 3; ++m) {
    for (std::size_t i = 0; i < n; ++i) raw[m].push_back(random_vec(dims[m], rng, false));
  }
  DdmHeads heads = DdmHeads::make(dims, proj, 1, rng);
  DisentangledFeatures df = project_dual(raw, heads);
  for (int m = 0; m < 3; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(df.mod_proj[m][i].size() == proj);
      CHECK(df.utt_proj[m][i].size() == proj);
      CHECK(df.concat[m][i].size() == dims[m] + 2 * proj);
    }
  }

  SUBCASE("zero heads produce zero projections") {
    std::vector<std::pair<std::string, Tensor>> params;
    heads.collect(params);
    for (auto& [name, p] : params) {
      for (auto& v : p.mutable_values()) v = 0.0;
    }
    DisentangledFeatures zeroed = project_dual(raw, heads);
    for (int m = 0; m < 3; ++m) {
      for (std::size_t i = 0; i < n; ++i) {
        for (double v : zeroed.mod_proj[m][i].values()) CHECK(v == 0.0);
        for (double v : zeroed.utt_proj[m][i].values()) CHECK(v == 0.0);
      }
    }
  }
}

TEST_CASE("loss is non-negative on random inputs") {
  Rng rng(49);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 1 + rng.below(4);
    std::vector<Tensor> vecs;
    for (std::size_t i = 0; i < 3 * n; ++i) vecs.push_back(random_vec(3, rng, false));
    auto mod = supervised_contrastive_loss(vecs, grouping_modality(n), 0.5);
    auto utt = supervised_contrastive_loss(vecs, grouping_utterance(n), 0.3);
    CHECK(mod.loss.item() >= 0.0);
    CHECK(utt.loss.item() >= 0.0);
  }
}

TEST_CASE("permuting utterance order leaves the loss unchanged") {
  Rng rng(50);
  const std::size_t n = 4;
  std::vector<std::vector<Tensor>> utts(n);
  std::vector<Tensor> flat;
  for (std::size_t i = 0; i < n; ++i) {
    for (int m = 0; m < 3; ++m) utts[i].push_back(random_vec(5, rng, false));
    for (int m = 0; m < 3; ++m) flat.push_back(utts[i][static_cast<std::size_t>(m)]);
  }
  double base_mod = supervised_contrastive_loss(flat, grouping_modality(n), 0.5).loss.item();
  double base_utt = supervised_contrastive_loss(flat, grouping_utterance(n), 0.3).loss.item();

  std::vector<std::size_t> perm = {2, 0, 3, 1};
  std::vector<Tensor> permuted;
  for (std::size_t i : perm) {
    for (int m = 0; m < 3; ++m) permuted.push_back(utts[i][static_cast<std::size_t>(m)]);
  }
  double perm_mod = supervised_contrastive_loss(permuted, grouping_modality(n), 0.5).loss.item();
  double perm_utt = supervised_contrastive_loss(permuted, grouping_utterance(n), 0.3).loss.item();
  CHECK(std::fabs(base_mod - perm_mod) < 1e-12);
  CHECK(std::fabs(base_utt - perm_utt) < 1e-12);
}

TEST_CASE("raising one positive similarity strictly lowers the loss") {
  // Similarities set directly through the matrix entry point.
  const std::size_t n = 2, m = 3 * n;
  std::vector<double> sims(m * m, 0.2);
  for (std::size_t i = 0; i < m; ++i) sims[i * m + i] = 1.0;
  auto pos = grouping_modality(n);
  double before = contrastive_from_sims(Tensor::of({m, m}, sims), pos, 0.5).loss.item();
  sims[0 * m + 3] += 0.1;
  sims[3 * m + 0] += 0.1;
  double after = contrastive_from_sims(Tensor::of({m, m}, sims), pos, 0.5).loss.item();
  CHECK(after < before);
}

TEST_CASE("contrastive losses pass the gradient check") {
  Rng rng(51);
  const std::size_t n = 2;
  std::vector<Tensor> vecs;
  std::vector<std::pair<std::string, Tensor>> params;
  for (std::size_t i = 0; i < 3 * n; ++i) {
    vecs.push_back(random_vec(4, rng, true));
    params.emplace_back("v" + std::to_string(i), vecs.back());
  }
  auto f_mod = [&] { return supervised_contrastive_loss(vecs, grouping_modality(n), 0.5).loss; };
  CHECK(grad_check(f_mod, params, 1e-5).max_rel_err < 1e-4);
  auto f_utt = [&] { return supervised_contrastive_loss(vecs, grouping_utterance(n), 0.3).loss; };
  CHECK(grad_check(f_utt, params, 1e-5).max_rel_err < 1e-4);
}

TEST_CASE("contrastive input validation") {
  std::vector<Tensor> one = {Tensor::of({2}, {1, 0})};
  CHECK_THROWS_AS(supervised_contrastive_loss(one, grouping_utterance(1), 0.5),
                  std::invalid_argument);
  std::vector<Tensor> two = {Tensor::of({2}, {1, 0}), Tensor::of({2}, {0, 1})};
  std::vector<std::vector<std::size_t>> bad_pos = {{1}, {0}};
  CHECK_THROWS_AS(supervised_contrastive_loss(two, bad_pos, 0.0), std::invalid_argument);
  std::vector<std::vector<std::size_t>> self_pos = {{0}, {0}};
  CHECK_THROWS_AS(supervised_contrastive_loss(two, self_pos, 0.5), std::invalid_argument);
}
