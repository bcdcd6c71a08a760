#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dferc/cfm.hpp"
#include "dferc/crm.hpp"
#include "dferc/data.hpp"
#include "dferc/ddm.hpp"
#include "dferc/lstm.hpp"

namespace dferc {

// Mechanism ablations mirroring the ablation table, plus modality subsets.
enum class Mechanism {
  full,
  no_ddm,        // drop both contrastive losses and the projections
  no_utterance,  // drop the utterance-level contrastive loss
  no_modality,   // drop the modality-level contrastive loss
  no_cfm,        // fixed fusion weights 1/3
  cfm_att,       // scaled dot-product attention over the modality vectors
  crm_full,      // context gate fixed to 1
  crm_zero,      // context gate fixed to 0
  crm_att,       // attention over context states instead of the gate
};

struct VariantSpec {
  Mechanism mech = Mechanism::full;
  std::array<bool, 3> use_modality = {true, true, true};  // text, audio, video

  static VariantSpec parse(const std::string& name);  // throws ValidationError
  std::string name() const;
  // The mechanism-ablation rows, in table order.
  static std::vector<std::string> mechanism_names();
  // The modality-subset rows.
  static std::vector<std::string> modality_subset_names();

  bool operator==(const VariantSpec&) const = default;
};

struct ModelConfig {
  DdmConfig ddm;
  CfmConfig cfm;
  CrmConfig crm;
  std::size_t hidden_layers = 1;  // hidden layers per MLP head

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct DatasetInfo {
  LabelSpace labels;
  std::size_t d_t = 0;
  std::size_t d_a = 0;
  std::size_t d_v = 0;

  static DatasetInfo of(const Dataset& ds);
  std::array<std::size_t, 3> raw_dims() const { return {d_t, d_a, d_v}; }
  nlohmann::json to_json() const;
  static DatasetInfo from_json(const nlohmann::json& j);
  bool operator==(const DatasetInfo&) const = default;
};

struct ForwardOptions {
  bool training = false;
  bool update_prototypes = false;
  double dropout = 0.0;
  Rng* dropout_rng = nullptr;
  // Per dialogue, per utterance, per modality TCP targets to use instead of
  // recomputing from the teachers (gradient checking holds them constant).
  const std::vector<std::vector<std::array<double, 3>>>* frozen_tcp = nullptr;
  bool collect_projections = false;
};

struct UttForward {
  int gold = 0;
  int pred = 0;
  double p_gold = 0.0;  // predicted probability of the gold emotion
  double ce = 0.0;      // per-utterance cross-entropy
  double psi = 0.0;
  std::array<double, 3> tcp = {0, 0, 0};
  std::array<double, 3> omega = {0, 0, 0};
};

struct DialogueForward {
  std::vector<UttForward> utts;
  Tensor loss_cl;
  Tensor loss_con;
  Tensor loss_sim;
  Tensor loss_emo;
  int skipped_anchors = 0;
  // Projection values for analysis, filled when collect_projections is set:
  // [modality][utterance] -> vector.
  std::array<std::vector<std::vector<double>>, 3> mod_proj_values;
  std::array<std::vector<std::vector<double>>, 3> utt_proj_values;
};

// The DF-ERC network: DDM projections and contrastive losses, adapters and
// contribution-aware fusion, prototype-aligned consistency gating over a
// BiLSTM context, and the emotion classifier.
class DfErcModel {
 public:
  DfErcModel(ModelConfig cfg, DatasetInfo info, VariantSpec variant, Rng& init_rng);

  // Runs one batch of whole dialogues. With update_prototypes set, the
  // prototype store ingests this batch's aligned features (detached) after
  // the alignment pass and before the margin loss, in dialogue order.
  std::vector<DialogueForward> forward_batch(std::span<const Dialogue* const> batch,
                                             const ForwardOptions& opts);

  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  PrototypeStore& prototypes() { return prototypes_; }
  const PrototypeStore& prototypes() const { return prototypes_; }

  const ModelConfig& config() const { return cfg_; }
  const VariantSpec& variant() const { return variant_; }
  const DatasetInfo& info() const { return info_; }
  std::size_t fused_dim() const { return cfg_.cfm.fusion_dim; }

 private:
  struct DialogueWork;
  DialogueWork stage_features(const Dialogue& d, const ForwardOptions& opts,
                              const std::vector<std::array<double, 3>>* frozen_tcp) const;
  DialogueForward finish(DialogueWork&& w, const ForwardOptions& opts) const;
  Tensor fuse_with_attention(const std::array<Tensor, 3>& u) const;
  Tensor context_with_attention(const Tensor& hf, std::span<const Tensor> hc) const;

  ModelConfig cfg_;
  DatasetInfo info_;
  VariantSpec variant_;

  DdmHeads ddm_heads_;
  std::array<MlpParams, 3> adapters_;  // linear, concat dim -> fusion dim
  CfmHeads cfm_heads_;
  CrmHeads crm_heads_;
  BiLstmParams context_;
  MlpParams classifier_;
  Tensor att_query_;       // cfm_att only
  MlpParams att_context_;  // crm_att only: h^f -> 2h query projection

  PrototypeStore prototypes_;
  std::vector<std::pair<std::string, Tensor>> params_;

  std::array<std::size_t, 3> concat_dims_;
  bool has_ddm_projections_ = true;
  bool has_cfm_ = true;
};

}  // namespace dferc
