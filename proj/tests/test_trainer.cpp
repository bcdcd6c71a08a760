#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dferc/analysis.hpp"
#include "dferc/grad_check.hpp"
#include "dferc/run_config.hpp"
#include "dferc/trainer.hpp"

using namespace dferc;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() / "dferc_trainer_tests";
  fs::create_directories(dir);
  return (dir / (std::to_string(counter++) + "_" + name)).string();
}

SynthConfig tiny_synth(std::uint64_t seed = 5) {
  SynthConfig cfg;
  cfg.K = 3;
  cfg.d_t = 6;
  cfg.d_a = 5;
  cfg.d_v = 4;
  cfg.train_dialogues = 6;
  cfg.valid_dialogues = 3;
  cfg.test_dialogues = 3;
  cfg.mean_len = 4;
  cfg.max_len = 6;
  cfg.seed = seed;
  return cfg;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.ddm.proj_dim = 6;
  mc.cfm.fusion_dim = 10;
  mc.cfm.head_hidden = 8;
  mc.crm.align_dim = 7;
  mc.crm.context_hidden = 5;
  return mc;
}

TrainConfig tiny_train(std::uint64_t seed, long epochs = 2) {
  TrainConfig tc;
  tc.seed = seed;
  tc.epochs = epochs;
  tc.batch_size = 3;
  tc.warmup_steps = 5;
  return tc;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("prediction head") {
  Rng rng(1);
  MlpParams head = MlpParams::make(4, {4}, 5, rng);
  SUBCASE("zero head gives the uniform distribution") {
    std::vector<std::pair<std::string, Tensor>> params;
    head.collect("c", params);
    for (auto& [name, p] : params) {
      for (auto& v : p.mutable_values()) v = 0.0;
    }
    Tensor y = predict(Tensor::of({4}, {1, -2, 3, 0.5}), head);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("distribution sums to one") {
    Tensor y = predict(Tensor::of({4}, {1, -2, 3, 0.5}), head);
    double s = 0.0;
    for (double v : y.values()) s += v;
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("emotion loss") {
  SUBCASE("uniform distribution costs ln K") {
    std::vector<Tensor> y = {Tensor::full({7}, 1.0 / 7.0)};
    std::vector<int> gold = {3};
    CHECK(emotion_loss(y, gold).item() == doctest::Approx(std::log(7.0)).epsilon(1e-14));
    CHECK(emotion_loss(y, gold).item() == doctest::Approx(1.94591).epsilon(1e-5));
  }
  SUBCASE("certain correct prediction costs zero") {
    std::vector<Tensor> y = {Tensor::of({3}, {0.0, 1.0, 0.0})};
    std::vector<int> gold = {1};
    CHECK(emotion_loss(y, gold).item() == 0.0);
  }
  SUBCASE("random case equals the summation oracle") {
    Rng rng(2);
    std::vector<Tensor> y;
    std::vector<int> gold;
    double expect = 0.0;
    for (int i = 0; i < 6; ++i) {
      std::vector<double> logits(4);
      for (auto& v : logits) v = rng.normal();
      Tensor p = softmax(Tensor::of({4}, logits));
      y.push_back(p);
      gold.push_back(static_cast<int>(rng.below(4)));
      expect -= std::log(p.at(static_cast<std::size_t>(gold.back())));
    }
    CHECK(emotion_loss(y, gold).item() == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("total loss weighting") {
  Tensor cl = Tensor::scalar(2.0), con = Tensor::scalar(1.0), sim = Tensor::scalar(0.5),
         emo = Tensor::scalar(1.0);
  CHECK(total_loss(cl, con, sim, emo, 0.3, 0.8, 0.3).item() ==
        doctest::Approx(2.55).epsilon(1e-15));

  SUBCASE("gradient is the alpha-weighted sum of component gradients") {
    Tensor theta = Tensor::of({3}, {0.4, -0.9, 1.3}, true);
    auto c1 = [&] { return dot(theta, theta); };
    auto c2 = [&] { return sum(tanh(theta)); };
    auto c3 = [&] { return mean(mul(theta, theta)); };
    auto c4 = [&] { return sum(sigmoid(theta)); };

    auto grad_of = [&](const std::function<Tensor()>& f) {
      theta.zero_grad();
      f().backward();
      return std::vector<double>(theta.grad().begin(), theta.grad().end());
    };
    auto g1 = grad_of(c1), g2 = grad_of(c2), g3 = grad_of(c3), g4 = grad_of(c4);
    theta.zero_grad();
    total_loss(c1(), c2(), c3(), c4(), 0.3, 0.8, 0.3).backward();
    for (std::size_t i = 0; i < 3; ++i) {
      double expect = 0.3 * g1[i] + 0.8 * g2[i] + 0.3 * g3[i] + g4[i];
      CHECK(theta.grad()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("metrics") {
  LabelSpace labels{{"a", "b"}};
  SUBCASE("perfect predictions") {
    Metrics m = Metrics::from_predictions({0, 1, 0, 1}, {0, 1, 0, 1}, labels);
    CHECK(m.accuracy == 1.0);
    CHECK(m.weighted_f1 == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("all-one-class predictions on a balanced set") {
    Metrics m = Metrics::from_predictions({0, 0, 1, 1}, {0, 0, 0, 0}, labels);
    CHECK(m.accuracy == doctest::Approx(0.5).epsilon(1e-15));
    // class a: P=0.5 R=1 F1=2/3; class b: F1=0; weights 0.5 each.
    CHECK(m.weighted_f1 == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(m.per_class[0].precision == doctest::Approx(0.5));
    CHECK(m.per_class[0].recall == doctest::Approx(1.0));
    CHECK(m.per_class[1].f1 == 0.0);
  }
  SUBCASE("accuracy equals the confusion trace ratio") {
    Rng rng(3);
    LabelSpace l4{{"a", "b", "c", "d"}};
    std::vector<int> gold, pred;
    for (int i = 0; i < 200; ++i) {
      gold.push_back(static_cast<int>(rng.below(4)));
      pred.push_back(static_cast<int>(rng.below(4)));
    }
    Metrics m = Metrics::from_predictions(gold, pred, l4);
    long trace = 0;
    for (int k = 0; k < 4; ++k) trace += m.confusion[k][k];
    CHECK(m.accuracy == doctest::Approx(static_cast<double>(trace) / 200.0).epsilon(1e-15));
    CHECK(m.total == 200);
  }
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.alpha1 = 0.0;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = TrainConfig{};
  tc.alpha3 = 1.5;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = TrainConfig{};
  tc.epochs = 0;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  CHECK_NOTHROW(TrainConfig::iemocap_preset().validate());
}

TEST_CASE("variant parsing round trips") {
  for (const auto& name : VariantSpec::mechanism_names()) {
    CHECK(VariantSpec::parse(name).name() == name);
  }
  for (const auto& name : VariantSpec::modality_subset_names()) {
    CHECK(VariantSpec::parse(name).name() == name);
  }
  CHECK_THROWS_AS(VariantSpec::parse("-XYZ"), ValidationError);
  CHECK_THROWS_AS(VariantSpec::parse(""), ValidationError);
}

TEST_CASE("training smoke run keeps finite losses") {
  SynthOutput synth = generate_synthetic(tiny_synth());
  TrainResult r = train_model(tiny_model(), tiny_train(1, 2), VariantSpec{}, synth.train,
                              synth.valid);
  REQUIRE(r.epochs.size() == 2);
  for (const auto& e : r.epochs) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.loss_cl));
    CHECK(std::isfinite(e.loss_con));
    CHECK(std::isfinite(e.loss_sim));
    CHECK(std::isfinite(e.loss_emo));
  }
  CHECK(r.best_epoch >= 1);
}

TEST_CASE("same seed trains to bit-identical parameters") {
  SynthOutput synth = generate_synthetic(tiny_synth());
  TrainResult a = train_model(tiny_model(), tiny_train(7, 2), VariantSpec{}, synth.train,
                              synth.valid);
  TrainResult b = train_model(tiny_model(), tiny_train(7, 2), VariantSpec{}, synth.train,
                              synth.valid);
  REQUIRE(a.best.params.size() == b.best.params.size());
  for (std::size_t i = 0; i < a.best.params.size(); ++i) {
    auto av = a.best.params[i].second.values();
    auto bv = b.best.params[i].second.values();
    REQUIRE(av.size() == bv.size());
    for (std::size_t j = 0; j < av.size(); ++j) CHECK(av[j] == bv[j]);
  }
  CHECK(a.best_valid.to_json() == b.best_valid.to_json());

  TrainResult c = train_model(tiny_model(), tiny_train(8, 2), VariantSpec{}, synth.train,
                              synth.valid);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.best.params.size() && !any_diff; ++i) {
    auto av = a.best.params[i].second.values();
    auto cv = c.best.params[i].second.values();
    for (std::size_t j = 0; j < av.size(); ++j) {
      if (av[j] != cv[j]) {
        any_diff = true;
        break;
      }
    }
  }
  CHECK(any_diff);
}

TEST_CASE("training loss decreases over epochs") {
  SynthConfig cfg = tiny_synth(21);
  cfg.train_dialogues = 40;
  cfg.valid_dialogues = 8;
  SynthOutput synth = generate_synthetic(cfg);
  for (std::uint64_t seed : {1ull, 2ull}) {
    TrainResult r = train_model(tiny_model(), tiny_train(seed, 6), VariantSpec{}, synth.train,
                                synth.valid);
    CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
  }
}

TEST_CASE("gradient clipping bounds the post-clip norm") {
  Tensor p = Tensor::of({3}, {0.0, 0.0, 0.0}, true);
  auto grads = p.mutable_grad();
  grads[0] = 30.0;
  grads[1] = -40.0;
  grads[2] = 120.0;
  AdamW opt({{"p", p}}, {});
  double pre = opt.clip_global_norm(1.0);
  CHECK(pre == doctest::Approx(std::sqrt(30.0 * 30 + 40 * 40 + 120 * 120)).epsilon(1e-12));
  double post = opt.clip_global_norm(1.0);  // returns the norm after the first clip
  CHECK(post <= 1.0 + 1e-9);
  CHECK(post == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("warmup schedule ramps linearly then stays constant") {
  Tensor p = Tensor::of({1}, {1.0}, true);
  AdamWConfig cfg;
  cfg.lr = 1e-2;
  cfg.warmup_steps = 4;
  AdamW opt({{"p", p}}, cfg);
  CHECK(opt.current_lr() == doctest::Approx(1e-2 * 0.25));
  p.mutable_grad()[0] = 1.0;
  opt.step();
  CHECK(opt.current_lr() == doctest::Approx(1e-2 * 0.5));
  opt.step();
  opt.step();
  opt.step();
  CHECK(opt.current_lr() == doctest::Approx(1e-2));
  opt.step();
  CHECK(opt.current_lr() == doctest::Approx(1e-2));
}

TEST_CASE("checkpoint round trip is bit exact") {
  SynthOutput synth = generate_synthetic(tiny_synth(9));
  TrainResult r = train_model(tiny_model(), tiny_train(3, 2), VariantSpec{}, synth.train,
                              synth.valid);
  std::string path = temp_path("ckpt.json");
  save_checkpoint(r.best, path);
  Checkpoint loaded = load_checkpoint(path);

  // Save -> load -> save produces identical bytes.
  std::string path2 = temp_path("ckpt2.json");
  save_checkpoint(loaded, path2);
  CHECK(slurp(path) == slurp(path2));

  // Evaluation through the restored model reproduces metrics bit-exactly.
  DfErcModel direct = r.best.restore_model();
  DfErcModel restored = loaded.restore_model();
  Metrics m1 = evaluate(direct, synth.test);
  Metrics m2 = evaluate(restored, synth.test);
  CHECK(m1.to_json().dump() == m2.to_json().dump());
}

TEST_CASE("evaluate is pure") {
  SynthOutput synth = generate_synthetic(tiny_synth(10));
  TrainResult r = train_model(tiny_model(), tiny_train(4, 1), VariantSpec{}, synth.train,
                              synth.valid);
  DfErcModel model = r.best.restore_model();
  Metrics m1 = evaluate(model, synth.test);
  Metrics m2 = evaluate(model, synth.test);
  CHECK(m1.to_json().dump() == m2.to_json().dump());
}

TEST_CASE("non-finite loss aborts with step diagnostics") {
  SynthOutput synth = generate_synthetic(tiny_synth(11));
  TrainConfig tc = tiny_train(1, 3);
  tc.lr = 1e200;  // guaranteed blow-up
  try {
    train_model(tiny_model(), tc, VariantSpec{}, synth.train, synth.valid);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    std::string msg = e.what();
    CHECK(msg.find("step") != std::string::npos);
    CHECK(msg.find("L_emo") != std::string::npos);
  }
}

TEST_CASE("mismatched eval split is rejected") {
  SynthOutput synth = generate_synthetic(tiny_synth(12));
  TrainResult r = train_model(tiny_model(), tiny_train(5, 1), VariantSpec{}, synth.train,
                              synth.valid);
  DfErcModel model = r.best.restore_model();
  SynthConfig other = tiny_synth(12);
  other.K = 4;  // different label space
  Dataset bad = generate_synthetic(other).test;
  CHECK_THROWS_AS(evaluate(model, bad), ValidationError);
}

TEST_CASE("static zero gate makes predictions context-free") {
  // Two dialogues identical in utterance 0, different in utterance 1. With
  // the -CRM(zero) gate the prediction for utterance 0 cannot depend on the
  // rest of the dialogue; with -CRM(full) it generally does.
  SynthConfig cfg = tiny_synth(13);
  SynthOutput synth = generate_synthetic(cfg);
  Dialogue d1 = synth.train.dialogues[0];
  REQUIRE(d1.utterances.size() >= 2);
  Dialogue d2 = d1;
  d2.dialogue_id = "copy";
  for (auto& v : d2.utterances[1].text_feat) v += 3.0;
  for (auto& v : d2.utterances[1].audio_feat) v -= 2.0;

  DatasetInfo info = DatasetInfo::of(synth.train);
  auto probe = [&](const char* variant_name) {
    Rng init = Rng::substream(99, "init");
    DfErcModel model(tiny_model(), info, VariantSpec::parse(variant_name), init);
    NoGradGuard ng;
    std::vector<const Dialogue*> b1 = {&d1}, b2 = {&d2};
    auto f1 = model.forward_batch(b1, {});
    auto f2 = model.forward_batch(b2, {});
    return std::fabs(f1[0].utts[0].p_gold - f2[0].utts[0].p_gold);
  };
  CHECK(probe("-CRM(zero)") == 0.0);
  CHECK(probe("-CRM(full)") > 0.0);
}

TEST_CASE("modality subsets zero the excluded inputs end to end") {
  SynthOutput synth = generate_synthetic(tiny_synth(14));
  const Dialogue& d = synth.train.dialogues[0];
  DatasetInfo info = DatasetInfo::of(synth.train);

  // Under the T-only variant, predictions ignore audio/video entirely.
  Rng init = Rng::substream(5, "init");
  DfErcModel model(tiny_model(), info, VariantSpec::parse("T"), init);
  Dialogue scrambled = d;
  for (auto& u : scrambled.utterances) {
    for (auto& v : u.audio_feat) v = -v + 1.0;
    for (auto& v : u.video_feat) v = 2.0 * v - 3.0;
  }
  NoGradGuard ng;
  std::vector<const Dialogue*> b1 = {&d}, b2 = {&scrambled};
  auto f1 = model.forward_batch(b1, {});
  auto f2 = model.forward_batch(b2, {});
  for (std::size_t i = 0; i < f1[0].utts.size(); ++i) {
    CHECK(f1[0].utts[i].p_gold == f2[0].utts[i].p_gold);
  }
}

TEST_CASE("ablation rejects unknown variants before training") {
  SynthOutput synth = generate_synthetic(tiny_synth(15));
  CHECK_THROWS_AS(run_ablation(tiny_model(), tiny_train(1, 1), {"full", "-BOGUS"}, {1},
                               synth.train, synth.valid, synth.test),
                  ValidationError);
}

TEST_CASE("text-only beats audio-only and video-only when text is reliable") {
  SynthConfig cfg;
  cfg.K = 4;
  cfg.d_t = 8;
  cfg.d_a = 6;
  cfg.d_v = 5;
  cfg.train_dialogues = 50;
  cfg.valid_dialogues = 12;
  cfg.test_dialogues = 12;
  cfg.mean_len = 6;
  cfg.max_len = 10;
  cfg.reliability = {1.0, 0.3, 0.3};
  cfg.rho = 0.0;
  cfg.seed = 33;
  SynthOutput synth = generate_synthetic(cfg);

  ModelConfig mc = tiny_model();
  TrainConfig tc = tiny_train(0, 4);
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  auto rows = run_ablation(mc, tc, {"T", "A", "V"}, seeds, synth.train, synth.valid, synth.test);

  auto mean_f1 = [&](const std::string& v) {
    double s = 0.0;
    int c = 0;
    for (const auto& row : rows) {
      if (row.variant == v) {
        s += row.test.weighted_f1;
        ++c;
      }
    }
    return s / c;
  };
  double t = mean_f1("T"), a = mean_f1("A"), v = mean_f1("V");
  MESSAGE("modality-only mean W-F1: T=" << t << " A=" << a << " V=" << v);
  CHECK(t > a);
  CHECK(t > v);
}

TEST_CASE("full objective gradient check on a 2-utterance dialogue") {
  // Tiny dims keep the parameter count small enough for finite differences.
  SynthConfig cfg;
  cfg.K = 3;
  cfg.d_t = 8;
  cfg.d_a = 6;
  cfg.d_v = 5;
  cfg.train_dialogues = 1;
  cfg.valid_dialogues = 1;
  cfg.test_dialogues = 1;
  cfg.mean_len = 2;
  cfg.max_len = 2;
  // Instance chosen so no parameter has a near-zero gradient; finite
  // differences at eps=1e-5 need every coordinate clear of the noise floor.
  cfg.seed = 41;
  cfg.sigma = 1.5;
  SynthOutput synth = generate_synthetic(cfg);
  Dialogue d = synth.train.dialogues[0];
  while (d.utterances.size() < 2) d.utterances.push_back(d.utterances[0]);
  d.utterances.resize(2);
  d.utterances[1].label = (d.utterances[0].label + 1) % 3;

  ModelConfig mc;
  mc.ddm.proj_dim = 3;
  mc.cfm.fusion_dim = 4;
  mc.cfm.head_hidden = 3;
  mc.crm.align_dim = 3;
  mc.crm.context_hidden = 2;

  Rng init = Rng::substream(78, "init");
  DfErcModel model(mc, DatasetInfo::of(synth.train), VariantSpec{}, init);

  // Populate the prototype store once, then hold it constant.
  {
    std::vector<const Dialogue*> batch = {&d};
    ForwardOptions warm;
    warm.update_prototypes = true;
    model.forward_batch(batch, warm);
  }
  // Freeze TCP targets at the base parameter values.
  std::vector<std::vector<std::array<double, 3>>> frozen(1);
  {
    std::vector<const Dialogue*> batch = {&d};
    auto fw = model.forward_batch(batch, {});
    for (const auto& u : fw[0].utts) frozen[0].push_back(u.tcp);
  }

  auto f = [&] {
    std::vector<const Dialogue*> batch = {&d};
    ForwardOptions opts;
    opts.frozen_tcp = &frozen;
    auto fw = model.forward_batch(batch, opts);
    return total_loss(fw[0].loss_cl, fw[0].loss_con, fw[0].loss_sim, fw[0].loss_emo, 0.3, 0.8,
                      0.3);
  };
  auto report = grad_check(f, model.parameters(), 1e-5);
  MESSAGE("full objective rel err " << report.max_rel_err << " over " << report.coords_checked
                                    << " coords (worst " << report.worst_param << ")");
  CHECK(report.max_rel_err < 1e-4);
}
