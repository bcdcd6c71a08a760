#include "dferc/trainer.hpp"

#include <cmath>
#include <sstream>

namespace dferc {

using nlohmann::json;

void TrainConfig::validate() const {
  auto in_unit = [](double a) { return a > 0.0 && a <= 1.0; };
  if (!in_unit(alpha1) || !in_unit(alpha2) || !in_unit(alpha3)) {
    throw ValidationError("train: alpha1..3 must lie in (0,1]");
  }
  if (lr <= 0.0) throw ValidationError("train: lr must be positive");
  if (weight_decay < 0.0) throw ValidationError("train: weight_decay must be >= 0");
  if (warmup_steps < 0) throw ValidationError("train: warmup_steps must be >= 0");
  if (max_grad_norm <= 0.0) throw ValidationError("train: max_grad_norm must be positive");
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("train: dropout must be in [0,1)");
}

json TrainConfig::to_json() const {
  return {{"alpha1", alpha1},       {"alpha2", alpha2},
          {"alpha3", alpha3},       {"lr", lr},
          {"weight_decay", weight_decay}, {"warmup_steps", warmup_steps},
          {"max_grad_norm", max_grad_norm}, {"epochs", epochs},
          {"batch_size", batch_size}, {"dropout", dropout},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.alpha1 = j.value("alpha1", c.alpha1);
  c.alpha2 = j.value("alpha2", c.alpha2);
  c.alpha3 = j.value("alpha3", c.alpha3);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

ModelConfig bench_model_config() {
  ModelConfig mc;
  mc.ddm.proj_dim = 24;
  mc.cfm.fusion_dim = 48;
  mc.cfm.head_hidden = 32;
  mc.crm.align_dim = 32;
  mc.crm.context_hidden = 24;
  mc.hidden_layers = 1;
  return mc;
}

TrainConfig bench_train_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.seed = seed;
  return tc;
}

Tensor predict(const Tensor& he, const MlpParams& head) {
  return softmax(mlp_forward(he, head));
}

Tensor emotion_loss(std::span<const Tensor> y, std::span<const int> gold) {
  if (y.size() != gold.size()) throw std::invalid_argument("emotion_loss: length mismatch");
  if (y.empty()) throw std::invalid_argument("emotion_loss: empty input");
  std::vector<Tensor> terms;
  terms.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    terms.push_back(affine_map(log_clamped(pick(y[i], static_cast<std::size_t>(gold[i]))),
                               -1.0, 0.0));
  }
  return add_n(terms);
}

Tensor total_loss(const Tensor& cl, const Tensor& con, const Tensor& sim, const Tensor& emo,
                  double a1, double a2, double a3) {
  return add_n({scale(cl, a1), scale(con, a2), scale(sim, a3), emo});
}

namespace {

void check_compatible(const DatasetInfo& info, const Dataset& ds, const char* what) {
  DatasetInfo other = DatasetInfo::of(ds);
  if (!(other == info)) {
    throw ValidationError(std::string(what) + " split does not match the training manifest");
  }
}

}  // namespace

TrainResult train_model(const ModelConfig& mc, const TrainConfig& tc, VariantSpec variant,
                        const Dataset& train, const Dataset& valid,
                        const EpochCallback& on_epoch) {
  mc.validate();
  tc.validate();
  train.validate();
  valid.validate();
  DatasetInfo info = DatasetInfo::of(train);
  check_compatible(info, valid, "valid");
  if (train.dialogues.empty()) throw ValidationError("train split is empty");

  Rng init_rng = Rng::substream(tc.seed, "init");
  Rng dropout_rng = Rng::substream(tc.seed, "dropout");
  Rng shuffle_rng = Rng::substream(tc.seed, "shuffle");

  DfErcModel model(mc, info, variant, init_rng);
  AdamW opt(model.parameters(),
            {tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay, tc.warmup_steps});

  TrainResult result;
  long step = 0;
  for (long epoch = 1; epoch <= tc.epochs; ++epoch) {
    auto batches = make_batches(train.dialogues.size(), tc.batch_size, shuffle_rng);
    double ep_total = 0.0, ep_cl = 0.0, ep_con = 0.0, ep_sim = 0.0, ep_emo = 0.0;
    for (const auto& batch : batches) {
      ++step;
      std::vector<const Dialogue*> dialogues;
      dialogues.reserve(batch.size());
      for (std::size_t idx : batch) dialogues.push_back(&train.dialogues[idx]);

      ForwardOptions opts;
      opts.training = true;
      opts.update_prototypes = true;
      opts.dropout = tc.dropout;
      opts.dropout_rng = &dropout_rng;

      double cl = 0, con = 0, sim = 0, emo = 0, total_v = 0;
      try {
        opt.zero_grad();
        auto fws = model.forward_batch(dialogues, opts);
        std::vector<Tensor> cls, cons, sims, emos;
        for (const auto& f : fws) {
          cls.push_back(f.loss_cl);
          cons.push_back(f.loss_con);
          sims.push_back(f.loss_sim);
          emos.push_back(f.loss_emo);
        }
        Tensor sum_cl = add_n(cls), sum_con = add_n(cons), sum_sim = add_n(sims),
               sum_emo = add_n(emos);
        Tensor total =
            total_loss(sum_cl, sum_con, sum_sim, sum_emo, tc.alpha1, tc.alpha2, tc.alpha3);
        cl = sum_cl.item();
        con = sum_con.item();
        sim = sum_sim.item();
        emo = sum_emo.item();
        total_v = total.item();
        if (!std::isfinite(total_v)) {
          throw std::runtime_error("total loss is non-finite");
        }
        total.backward();
      } catch (const std::runtime_error& e) {
        std::ostringstream os;
        os << "training aborted at step " << step << " (epoch " << epoch << "): " << e.what()
           << " [L_cl=" << cl << " L_con=" << con << " L_sim=" << sim << " L_emo=" << emo << "]";
        throw TrainingError(os.str());
      }
      opt.clip_global_norm(tc.max_grad_norm);
      opt.step();
      ep_total += total_v;
      ep_cl += cl;
      ep_con += con;
      ep_sim += sim;
      ep_emo += emo;
    }

    EpochLog log;
    log.epoch = epoch;
    double inv_n = 1.0 / static_cast<double>(train.dialogues.size());
    log.train_loss = ep_total * inv_n;
    log.loss_cl = ep_cl * inv_n;
    log.loss_con = ep_con * inv_n;
    log.loss_sim = ep_sim * inv_n;
    log.loss_emo = ep_emo * inv_n;
    log.valid = evaluate(model, valid);

    if (result.best_epoch < 0 || log.valid.weighted_f1 > result.best_valid.weighted_f1) {
      result.best = Checkpoint::of(model);
      result.best.train_config = tc.to_json();
      result.best.rng_state = {{"seed", tc.seed},
                               {"dropout", dropout_rng.state()},
                               {"shuffle", shuffle_rng.state()}};
      result.best.epoch = epoch;
      result.best.step = step;
      result.best.best_epoch = epoch;
      result.best_epoch = epoch;
      result.best_valid = log.valid;
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(result.epochs.back());
  }
  return result;
}

Metrics evaluate(DfErcModel& model, const Dataset& ds) {
  return evaluate_detailed(model, ds, false).metrics;
}

EvalDetails evaluate_detailed(DfErcModel& model, const Dataset& ds, bool collect_projections) {
  ds.validate();
  check_compatible(model.info(), ds, "eval");
  NoGradGuard ng;

  EvalDetails details;
  std::vector<int> gold, pred;
  ForwardOptions opts;
  opts.collect_projections = collect_projections;

  constexpr std::size_t kChunk = 16;
  const auto& dialogues = ds.dialogues;
  for (std::size_t start = 0; start < dialogues.size(); start += kChunk) {
    std::size_t end = std::min(start + kChunk, dialogues.size());
    std::vector<const Dialogue*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&dialogues[i]);
    auto fws = model.forward_batch(batch, opts);
    for (std::size_t b = 0; b < fws.size(); ++b) {
      const Dialogue& d = dialogues[start + b];
      for (std::size_t i = 0; i < fws[b].utts.size(); ++i) {
        const UttForward& f = fws[b].utts[i];
        gold.push_back(f.gold);
        pred.push_back(f.pred);
        UttEvalRecord rec;
        rec.dialogue_id = d.dialogue_id;
        rec.utt_id = d.utterances[i].utt_id;
        rec.gold = f.gold;
        rec.pred = f.pred;
        rec.p_gold = f.p_gold;
        rec.ce = f.ce;
        rec.psi = f.psi;
        rec.tcp = f.tcp;
        rec.omega = f.omega;
        details.utts.push_back(std::move(rec));
      }
      if (collect_projections) {
        for (int m = 0; m < kModalities; ++m) {
          for (auto& row : fws[b].mod_proj_values[m]) details.mod_proj[m].push_back(std::move(row));
          for (auto& row : fws[b].utt_proj_values[m]) details.utt_proj[m].push_back(std::move(row));
        }
      }
    }
  }
  details.metrics = Metrics::from_predictions(gold, pred, ds.manifest.label_space);
  return details;
}

std::vector<AblationRow> run_ablation(const ModelConfig& mc, const TrainConfig& tc,
                                      const std::vector<std::string>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const Dataset& train, const Dataset& valid,
                                      const Dataset& test,
                                      const std::function<void(const AblationRow&)>& on_row) {
  if (variants.empty()) throw ValidationError("ablation: no variants given");
  if (seeds.empty()) throw ValidationError("ablation: no seeds given");
  std::vector<AblationRow> rows;
  for (const auto& vname : variants) {
    VariantSpec variant = VariantSpec::parse(vname);  // validate before any training
    for (std::uint64_t seed : seeds) {
      TrainConfig tcs = tc;
      tcs.seed = seed;
      TrainResult r = train_model(mc, tcs, variant, train, valid);
      DfErcModel best = r.best.restore_model();
      AblationRow row;
      row.variant = vname;
      row.seed = seed;
      row.valid = r.best_valid;
      row.test = evaluate(best, test);
      rows.push_back(row);
      if (on_row) on_row(rows.back());
    }
  }
  return rows;
}

}  // namespace dferc
