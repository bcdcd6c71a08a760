#include <doctest.h>

#include <cmath>
#include <vector>

#include "dferc/cfm.hpp"
#include "dferc/ddm.hpp"
#include "dferc/grad_check.hpp"
#include "dferc/optim.hpp"

using namespace dferc;

namespace {

Tensor random_vec(std::size_t d, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return Tensor::of({d}, std::move(v), requires_grad);
}

void zero_all(std::vector<std::pair<std::string, Tensor>>& params) {
  for (auto& [name, p] : params) {
    for (auto& v : p.mutable_values()) v = 0.0;
  }
}

ModalityFeatures random_feats(std::size_t n, std::size_t d, Rng& rng) {
  ModalityFeatures feats;
  for (int m = 0; m < 3; ++m) {
    for (std::size_t i = 0; i < n; ++i) feats[m].push_back(random_vec(d, rng));
  }
  return feats;
}

}  // namespace

TEST_CASE("zero teachers give uniform distributions") {
  Rng rng(1);
  const std::size_t n = 3, d = 5, K = 7;
  CfmHeads heads = CfmHeads::make({d, d, d}, K, 4, 1, rng);
  std::vector<std::pair<std::string, Tensor>> params;
  heads.collect(params);
  zero_all(params);
  auto feats = random_feats(n, d, rng);
  auto z = teacher_distributions(feats, heads);
  for (int m = 0; m < 3; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      for (double v : z[m][i].values()) CHECK(v == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
    }
  }

  SUBCASE("distributions always sum to one") {
    Rng rng2(2);
    CfmHeads h2 = CfmHeads::make({d, d, d}, K, 4, 1, rng2);
    auto z2 = teacher_distributions(feats, h2);
    for (int m = 0; m < 3; ++m) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (double v : z2[m][i].values()) s += v;
        CHECK(std::fabs(s - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("tcp target extraction") {
  ModalityFeatures z;
  for (int m = 0; m < 3; ++m) z[m].push_back(Tensor::of({3}, {0.2, 0.5, 0.3}));
  std::vector<int> gold = {1};
  auto tcp = tcp_targets(z, gold);
  for (int m = 0; m < 3; ++m) CHECK(tcp[0][m] == doctest::Approx(0.5).epsilon(1e-15));

  SUBCASE("uniform distribution") {
    ModalityFeatures zu;
    for (int m = 0; m < 3; ++m) zu[m].push_back(Tensor::full({7}, 1.0 / 7.0));
    std::vector<int> g = {4};
    auto t = tcp_targets(zu, g);
    CHECK(t[0][0] == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  }
  SUBCASE("near one-hot") {
    ModalityFeatures zh;
    for (int m = 0; m < 3; ++m) zh[m].push_back(Tensor::of({3}, {0.98, 0.01, 0.01}));
    std::vector<int> g = {0};
    CHECK(tcp_targets(zh, g)[0][2] == doctest::Approx(0.98).epsilon(1e-15));
  }
  SUBCASE("gold out of range") {
    std::vector<int> g = {5};
    CHECK_THROWS_AS(tcp_targets(z, g), std::invalid_argument);
  }
}

TEST_CASE("contribution weights are sigmoids of the student head") {
  Rng rng(3);
  const std::size_t d = 4;
  CfmHeads heads = CfmHeads::make({d, d, d}, 3, 4, 1, rng);
  std::vector<std::pair<std::string, Tensor>> params;
  heads.collect(params);
  zero_all(params);
  auto feats = random_feats(2, d, rng);

  SUBCASE("zero student gives 0.5") {
    auto omega = contribution_weights(feats, heads);
    for (int m = 0; m < 3; ++m) {
      for (const auto& w : omega[m]) CHECK(w.item() == doctest::Approx(0.5).epsilon(1e-15));
    }
  }
  SUBCASE("bias 4 gives sigmoid(4)") {
    for (int m = 0; m < 3; ++m) {
      // output-layer bias is the last collected tensor of each student head
      auto& out_bias = heads.student[m].layers.back().b;
      out_bias.mutable_values()[0] = 4.0;
    }
    auto omega = contribution_weights(feats, heads);
    for (int m = 0; m < 3; ++m) {
      for (const auto& w : omega[m]) {
        CHECK(w.item() == doctest::Approx(0.9820137900379085).epsilon(1e-12));
      }
    }
  }
  SUBCASE("weights lie strictly inside (0,1)") {
    Rng rng2(4);
    CfmHeads h2 = CfmHeads::make({d, d, d}, 3, 4, 1, rng2);
    auto omega = contribution_weights(feats, h2);
    for (int m = 0; m < 3; ++m) {
      for (const auto& w : omega[m]) {
        CHECK(w.item() > 0.0);
        CHECK(w.item() < 1.0);
      }
    }
  }
}

TEST_CASE("cfm loss closed forms") {
  const std::size_t n = 4, K = 7;
  // Uniform teachers; students matched exactly to the TCP target so L_q = 0.
  ModalityFeatures z, omega;
  std::vector<int> gold;
  std::vector<std::array<double, 3>> tcp(n);
  for (std::size_t i = 0; i < n; ++i) {
    gold.push_back(static_cast<int>(i % K));
    for (int m = 0; m < 3; ++m) tcp[i][m] = 1.0 / K;
  }
  for (int m = 0; m < 3; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      z[m].push_back(Tensor::full({K}, 1.0 / K));
      omega[m].push_back(Tensor::scalar(1.0 / K));
    }
  }
  Tensor loss = cfm_loss(z, tcp, omega, gold);
  // L_q = 0 and L_p = n ln K per modality.
  CHECK(loss.item() == doctest::Approx(3.0 * n * std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("cfm loss matches a direct-summation oracle on random cases") {
  Rng rng(5);
  const std::size_t n = 3, K = 4;
  for (int trial = 0; trial < 5; ++trial) {
    ModalityFeatures z, omega;
    std::vector<int> gold;
    std::vector<std::array<double, 3>> tcp(n);
    for (std::size_t i = 0; i < n; ++i) gold.push_back(static_cast<int>(rng.below(K)));
    for (int m = 0; m < 3; ++m) {
      for (std::size_t i = 0; i < n; ++i) {
        z[m].push_back(softmax(random_vec(K, rng)));
        omega[m].push_back(sigmoid(Tensor::scalar(rng.normal())));
        tcp[i][m] = rng.uniform();
      }
    }
    double expect = 0.0;
    for (int m = 0; m < 3; ++m) {
      for (std::size_t i = 0; i < n; ++i) {
        expect -= std::log(z[m][i].at(static_cast<std::size_t>(gold[i])));
        double r = omega[m][i].item() - tcp[i][m];
        expect += r * r;
      }
    }
    CHECK(std::fabs(cfm_loss(z, tcp, omega, gold).item() - expect) < 1e-10);
  }
}

TEST_CASE("fusion") {
  ModalityFeatures feats;
  feats[0].push_back(Tensor::of({2}, {1.0, 0.0}));
  feats[1].push_back(Tensor::of({2}, {0.0, 1.0}));
  feats[2].push_back(Tensor::of({2}, {1.0, 1.0}));

  auto omega_of = [](double t, double a, double v) {
    ModalityFeatures omega;
    omega[0].push_back(Tensor::scalar(t));
    omega[1].push_back(Tensor::scalar(a));
    omega[2].push_back(Tensor::scalar(v));
    return omega;
  };

  SUBCASE("basis weights select one modality") {
    auto fused = fuse(feats, omega_of(1.0, 0.0, 0.0));
    CHECK(fused[0].at(0) == 1.0);
    CHECK(fused[0].at(1) == 0.0);
  }
  SUBCASE("convexity on equal inputs") {
    ModalityFeatures equal;
    equal[0].push_back(Tensor::of({2}, {0.3, -0.4}));
    equal[1].push_back(Tensor::of({2}, {0.3, -0.4}));
    equal[2].push_back(Tensor::of({2}, {9.0, 9.0}));
    auto fused = fuse(equal, omega_of(0.5, 0.5, 0.0));
    CHECK(fused[0].at(0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(fused[0].at(1) == doctest::Approx(-0.4).epsilon(1e-15));
  }
  SUBCASE("hand arithmetic") {
    auto fused = fuse(feats, omega_of(0.2, 0.3, 0.5));
    CHECK(fused[0].at(0) == doctest::Approx(0.7).epsilon(1e-14));
    CHECK(fused[0].at(1) == doctest::Approx(0.8).epsilon(1e-14));
  }
  SUBCASE("linearity in the weights") {
    Rng rng(6);
    auto w1 = omega_of(rng.uniform(), rng.uniform(), rng.uniform());
    auto w2 = omega_of(rng.uniform(), rng.uniform(), rng.uniform());
    ModalityFeatures wsum;
    for (int m = 0; m < 3; ++m) wsum[m].push_back(add(w1[m][0], w2[m][0]));
    auto lhs = fuse(feats, wsum);
    auto rhs = add(fuse(feats, w1)[0], fuse(feats, w2)[0]);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(lhs[0].at(i) == doctest::Approx(rhs.at(i)).epsilon(1e-12));
    }
  }
  SUBCASE("unequal fused dims are rejected") {
    ModalityFeatures bad = feats;
    bad[2][0] = Tensor::of({3}, {1, 1, 1});
    CHECK_THROWS_AS(fuse(bad, omega_of(0.3, 0.3, 0.4)), std::invalid_argument);
  }
  SUBCASE("fixed-weight fusion matches explicit weights") {
    auto fixed = fuse_fixed(feats, {1.0 / 3, 1.0 / 3, 1.0 / 3});
    auto viaomega = fuse(feats, omega_of(1.0 / 3, 1.0 / 3, 1.0 / 3));
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(fixed[0].at(i) == doctest::Approx(viaomega[0].at(i)).epsilon(1e-15));
    }
  }
}

TEST_CASE("gradient check on L_con with frozen TCP targets") {
  Rng rng(7);
  const std::size_t n = 2, d = 4, K = 3;
  CfmHeads heads = CfmHeads::make({d, d, d}, K, 4, 1, rng);
  auto feats = random_feats(n, d, rng);
  std::vector<int> gold = {1, 2};

  // Freeze the targets once; perturbations must not move them, otherwise
  // finite differences would see gradient flowing through the detached TCP.
  auto frozen = tcp_targets(teacher_distributions(feats, heads), gold);

  std::vector<std::pair<std::string, Tensor>> params;
  heads.collect(params);
  auto f = [&] {
    auto z = teacher_distributions(feats, heads);
    auto omega = contribution_weights(feats, heads);
    return cfm_loss(z, frozen, omega, gold);
  };
  auto report = grad_check(f, params, 1e-5);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("no gradient reaches the teacher through the TCP residual") {
  Rng rng(8);
  const std::size_t n = 2, d = 4, K = 3;
  CfmHeads heads = CfmHeads::make({d, d, d}, K, 4, 1, rng);
  auto feats = random_feats(n, d, rng);
  std::vector<int> gold = {0, 2};

  auto z = teacher_distributions(feats, heads);
  auto tcp = tcp_targets(z, gold);
  auto omega = contribution_weights(feats, heads);
  // The L_q part alone.
  std::vector<Tensor> terms;
  for (int m = 0; m < 3; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      Tensor r = affine_map(omega[m][i], 1.0, -tcp[i][m]);
      terms.push_back(mul(r, r));
    }
  }
  Tensor lq = add_n(terms);
  std::vector<std::pair<std::string, Tensor>> params;
  heads.collect(params);
  for (auto& [name, p] : params) p.zero_grad();
  lq.backward();
  for (auto& [name, p] : params) {
    bool teacher = name.find("teacher") != std::string::npos;
    if (!teacher) continue;
    if (!p.has_grad()) continue;
    for (double g : p.grad()) CHECK(g == 0.0);
  }
}

TEST_CASE("tcp behaviour under trained and untrained teachers") {
  Rng rng(9);
  const std::size_t d = 6, K = 3;

  SUBCASE("untrained teacher concentrates near 1/K") {
    CfmHeads heads = CfmHeads::make({d, d, d}, K, 8, 1, rng);
    double mean_tcp = 0.0;
    int count = 0;
    for (int trial = 0; trial < 50; ++trial) {
      ModalityFeatures feats = random_feats(1, d, rng);
      auto z = teacher_distributions(feats, heads);
      auto tcp = tcp_targets(z, std::vector<int>{static_cast<int>(rng.below(K))});
      for (int m = 0; m < 3; ++m) {
        mean_tcp += tcp[0][m];
        ++count;
      }
    }
    mean_tcp /= count;
    CHECK(mean_tcp > 0.5 / K);
    CHECK(mean_tcp < 2.5 / K);
  }

  SUBCASE("teacher trained on a separable toy set drives TCP toward 1") {
    // One cluster per class at distance 6, tiny noise.
    CfmHeads heads = CfmHeads::make({d, d, d}, K, 8, 1, rng);
    std::vector<std::pair<std::string, Tensor>> params;
    heads.teacher[0].collect("t", params);
    AdamW opt(params, {.lr = 3e-2, .weight_decay = 0.0, .warmup_steps = 0});

    std::vector<std::vector<double>> centers(K, std::vector<double>(d, 0.0));
    for (std::size_t k = 0; k < K; ++k) centers[k][k] = 6.0;
    auto sample = [&](std::size_t k) {
      std::vector<double> x = centers[k];
      for (auto& v : x) v += 0.05 * rng.normal();
      return Tensor::of({d}, std::move(x));
    };

    for (int step = 0; step < 150; ++step) {
      opt.zero_grad();
      std::vector<Tensor> terms;
      for (std::size_t k = 0; k < K; ++k) {
        Tensor z = softmax(mlp_forward(sample(k), heads.teacher[0]));
        terms.push_back(affine_map(log_clamped(pick(z, k)), -1.0, 0.0));
      }
      add_n(terms).backward();
      opt.step();
    }

    double mean_tcp = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      Tensor z = softmax(mlp_forward(sample(k), heads.teacher[0]));
      mean_tcp += pick(z, k).item();
    }
    CHECK(mean_tcp / K > 0.9);
  }
}
