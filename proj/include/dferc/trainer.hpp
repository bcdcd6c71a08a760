#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dferc/checkpoint.hpp"
#include "dferc/metrics.hpp"
#include "dferc/model.hpp"
#include "dferc/optim.hpp"

namespace dferc {

struct TrainConfig {
  double alpha1 = 0.3;  // contrastive weight
  double alpha2 = 0.8;  // contribution-fusion weight
  double alpha3 = 0.3;  // prototype-margin weight
  double lr = 1e-3;
  double weight_decay = 0.01;
  long warmup_steps = 100;
  double max_grad_norm = 1.0;
  long epochs = 10;
  std::size_t batch_size = 8;
  double dropout = 0.2;
  std::uint64_t seed = 1;

  void validate() const;  // alphas must lie in (0,1]
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);

  static TrainConfig meld_preset() { return TrainConfig{}; }
  static TrainConfig iemocap_preset() {
    TrainConfig c;
    c.alpha1 = 0.2;
    c.alpha2 = 0.9;
    c.alpha3 = 1.0;
    c.batch_size = 4;
    return c;
  }
};

// Model/train settings sized for the synthetic benchmark: small enough to
// train in seconds, large enough for every mechanism to matter.
ModelConfig bench_model_config();
TrainConfig bench_train_config(std::uint64_t seed);

// ---- objective pieces ----
Tensor predict(const Tensor& he, const MlpParams& head);
Tensor emotion_loss(std::span<const Tensor> y, std::span<const int> gold);
// L = a1*L_cl + a2*L_con + a3*L_sim + L_emo
Tensor total_loss(const Tensor& cl, const Tensor& con, const Tensor& sim, const Tensor& emo,
                  double a1, double a2, double a3);

// ---- training ----
struct EpochLog {
  long epoch = 0;
  double train_loss = 0.0;  // mean total loss per dialogue
  double loss_cl = 0.0;
  double loss_con = 0.0;
  double loss_sim = 0.0;
  double loss_emo = 0.0;
  Metrics valid;
};

struct TrainResult {
  Checkpoint best;  // by validation weighted F1
  long best_epoch = -1;
  Metrics best_valid;
  std::vector<EpochLog> epochs;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train_model(const ModelConfig& mc, const TrainConfig& tc, VariantSpec variant,
                        const Dataset& train, const Dataset& valid,
                        const EpochCallback& on_epoch = {});

// ---- evaluation ----
Metrics evaluate(DfErcModel& model, const Dataset& ds);

struct UttEvalRecord {
  std::string dialogue_id;
  std::string utt_id;
  int gold = 0;
  int pred = 0;
  double p_gold = 0.0;
  double ce = 0.0;
  double psi = 0.0;
  std::array<double, 3> tcp = {0, 0, 0};
  std::array<double, 3> omega = {0, 0, 0};
};

struct EvalDetails {
  Metrics metrics;
  std::vector<UttEvalRecord> utts;
  // DDM projections per modality, one row per utterance (empty unless
  // collected; empty rows under the -DDM variant).
  std::array<std::vector<std::vector<double>>, 3> mod_proj;
  std::array<std::vector<std::vector<double>>, 3> utt_proj;
};

EvalDetails evaluate_detailed(DfErcModel& model, const Dataset& ds,
                              bool collect_projections = false);

// ---- ablation ----
struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  Metrics valid;
  Metrics test;
};

// Trains every (variant, seed) pair on the given splits and evaluates on
// valid and test.
std::vector<AblationRow> run_ablation(const ModelConfig& mc, const TrainConfig& tc,
                                      const std::vector<std::string>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      const Dataset& train, const Dataset& valid,
                                      const Dataset& test,
                                      const std::function<void(const AblationRow&)>& on_row = {});

}  // namespace dferc
