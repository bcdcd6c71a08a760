#include "dferc/model.hpp"

#include <cmath>
#include <stdexcept>

namespace dferc {

using nlohmann::json;

VariantSpec VariantSpec::parse(const std::string& name) {
  VariantSpec v;
  if (name == "full") return v;
  if (name == "-DDM") { v.mech = Mechanism::no_ddm; return v; }
  if (name == "-Utterance") { v.mech = Mechanism::no_utterance; return v; }
  if (name == "-Modality") { v.mech = Mechanism::no_modality; return v; }
  if (name == "-CFM") { v.mech = Mechanism::no_cfm; return v; }
  if (name == "-CFM+Att") { v.mech = Mechanism::cfm_att; return v; }
  if (name == "-CRM(full)") { v.mech = Mechanism::crm_full; return v; }
  if (name == "-CRM(zero)") { v.mech = Mechanism::crm_zero; return v; }
  if (name == "-CRM+Att") { v.mech = Mechanism::crm_att; return v; }
  // Modality subsets: combinations of T, A, V joined by '+'.
  VariantSpec sub;
  sub.use_modality = {false, false, false};
  std::size_t i = 0;
  while (i < name.size()) {
    char c = name[i];
    if (c == 'T') sub.use_modality[0] = true;
    else if (c == 'A') sub.use_modality[1] = true;
    else if (c == 'V') sub.use_modality[2] = true;
    else throw ValidationError("unknown variant: '" + name + "'");
    ++i;
    if (i < name.size()) {
      if (name[i] != '+') throw ValidationError("unknown variant: '" + name + "'");
      ++i;
      if (i == name.size()) throw ValidationError("unknown variant: '" + name + "'");
    }
  }
  if (!sub.use_modality[0] && !sub.use_modality[1] && !sub.use_modality[2]) {
    throw ValidationError("unknown variant: '" + name + "'");
  }
  return sub;
}

std::string VariantSpec::name() const {
  switch (mech) {
    case Mechanism::no_ddm: return "-DDM";
    case Mechanism::no_utterance: return "-Utterance";
    case Mechanism::no_modality: return "-Modality";
    case Mechanism::no_cfm: return "-CFM";
    case Mechanism::cfm_att: return "-CFM+Att";
    case Mechanism::crm_full: return "-CRM(full)";
    case Mechanism::crm_zero: return "-CRM(zero)";
    case Mechanism::crm_att: return "-CRM+Att";
    case Mechanism::full: break;
  }
  if (use_modality == std::array<bool, 3>{true, true, true}) return "full";
  std::string s;
  if (use_modality[0]) s += "T+";
  if (use_modality[1]) s += "A+";
  if (use_modality[2]) s += "V+";
  s.pop_back();
  return s;
}

std::vector<std::string> VariantSpec::mechanism_names() {
  return {"full", "-DDM", "-Utterance", "-Modality", "-CFM", "-CFM+Att",
          "-CRM(full)", "-CRM(zero)", "-CRM+Att"};
}

std::vector<std::string> VariantSpec::modality_subset_names() {
  return {"T", "A", "V", "T+A", "T+V", "A+V"};
}

void ModelConfig::validate() const {
  ddm.validate();
  cfm.validate();
  crm.validate();
}

json ModelConfig::to_json() const {
  return {{"proj_dim", ddm.proj_dim},
          {"tau_m", ddm.tau_m},
          {"tau_u", ddm.tau_u},
          {"anchors_all", ddm.anchors_all},
          {"fusion_dim", cfm.fusion_dim},
          {"head_hidden", cfm.head_hidden},
          {"align_dim", crm.align_dim},
          {"margin_beta", crm.margin_beta},
          {"context_hidden", crm.context_hidden},
          {"clamp_psi", crm.clamp_psi},
          {"hidden_layers", hidden_layers}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.ddm.proj_dim = j.value("proj_dim", c.ddm.proj_dim);
  c.ddm.tau_m = j.value("tau_m", c.ddm.tau_m);
  c.ddm.tau_u = j.value("tau_u", c.ddm.tau_u);
  c.ddm.anchors_all = j.value("anchors_all", c.ddm.anchors_all);
  c.cfm.fusion_dim = j.value("fusion_dim", c.cfm.fusion_dim);
  c.cfm.head_hidden = j.value("head_hidden", c.cfm.head_hidden);
  c.crm.align_dim = j.value("align_dim", c.crm.align_dim);
  c.crm.margin_beta = j.value("margin_beta", c.crm.margin_beta);
  c.crm.context_hidden = j.value("context_hidden", c.crm.context_hidden);
  c.crm.clamp_psi = j.value("clamp_psi", c.crm.clamp_psi);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  c.validate();
  return c;
}

DatasetInfo DatasetInfo::of(const Dataset& ds) {
  return {ds.manifest.label_space, ds.manifest.d_t, ds.manifest.d_a, ds.manifest.d_v};
}

json DatasetInfo::to_json() const {
  return {{"label_space", labels.names}, {"d_t", d_t}, {"d_a", d_a}, {"d_v", d_v}};
}

DatasetInfo DatasetInfo::from_json(const json& j) {
  DatasetInfo info;
  info.labels.names = j.at("label_space").get<std::vector<std::string>>();
  info.d_t = j.at("d_t").get<std::size_t>();
  info.d_a = j.at("d_a").get<std::size_t>();
  info.d_v = j.at("d_v").get<std::size_t>();
  return info;
}

DfErcModel::DfErcModel(ModelConfig cfg, DatasetInfo info, VariantSpec variant, Rng& init_rng)
    : cfg_(std::move(cfg)), info_(std::move(info)), variant_(variant) {
  cfg_.validate();
  info_.labels.validate();
  const std::size_t K = info_.labels.K();

  has_ddm_projections_ = variant_.mech != Mechanism::no_ddm;
  has_cfm_ = variant_.mech != Mechanism::no_cfm && variant_.mech != Mechanism::cfm_att;

  auto raw = info_.raw_dims();
  for (int m = 0; m < kModalities; ++m) {
    concat_dims_[m] = has_ddm_projections_ ? raw[m] + 2 * cfg_.ddm.proj_dim : raw[m];
  }

  // Head construction order is fixed so that a given seed names the same
  // parameter values regardless of later mutations.
  if (has_ddm_projections_) {
    ddm_heads_ = DdmHeads::make(raw, cfg_.ddm.proj_dim, cfg_.hidden_layers, init_rng);
  }
  for (int m = 0; m < kModalities; ++m) {
    adapters_[m] = MlpParams::make(concat_dims_[m], {}, cfg_.cfm.fusion_dim, init_rng);
  }
  if (has_cfm_) {
    cfm_heads_ = CfmHeads::make(concat_dims_, K, cfg_.cfm.head_hidden, cfg_.hidden_layers,
                                init_rng);
  }
  crm_heads_ = CrmHeads::make(concat_dims_, cfg_.crm.align_dim, cfg_.crm.align_dim,
                              cfg_.hidden_layers, init_rng);
  context_ = BiLstmParams::make(cfg_.cfm.fusion_dim, cfg_.crm.context_hidden, init_rng);
  std::size_t he_dim = cfg_.cfm.fusion_dim + 2 * cfg_.crm.context_hidden;
  classifier_ = MlpParams::make(he_dim, std::vector<std::size_t>(cfg_.hidden_layers,
                                                                 cfg_.cfm.head_hidden),
                                K, init_rng);
  if (variant_.mech == Mechanism::cfm_att) {
    att_query_ = Tensor::uniform_init({cfg_.cfm.fusion_dim}, cfg_.cfm.fusion_dim, init_rng);
  }
  if (variant_.mech == Mechanism::crm_att) {
    att_context_ = MlpParams::make(cfg_.cfm.fusion_dim, {}, 2 * cfg_.crm.context_hidden,
                                   init_rng);
  }

  prototypes_ = PrototypeStore(K, cfg_.crm.align_dim);

  if (has_ddm_projections_) ddm_heads_.collect(params_);
  for (int m = 0; m < kModalities; ++m) {
    adapters_[m].collect(std::string("adapter.") + kModalityNames[m], params_);
  }
  if (has_cfm_) cfm_heads_.collect(params_);
  crm_heads_.collect(params_);
  context_.collect("context.bilstm", params_);
  classifier_.collect("classifier", params_);
  if (att_query_.defined()) params_.emplace_back("cfm.att_query", att_query_);
  if (variant_.mech == Mechanism::crm_att) att_context_.collect("crm.att_query", params_);
}

struct DfErcModel::DialogueWork {
  std::vector<int> gold;
  ModalityFeatures concat_feats;
  std::array<std::vector<Tensor>, 3> mod_proj, utt_proj;
  ModalityFeatures aligned;
  std::vector<Tensor> fused;
  std::vector<std::array<Tensor, 3>> omega_t;
  std::vector<std::array<double, 3>> tcp;
  Tensor loss_cl, loss_con;
  int skipped_anchors = 0;
};

DfErcModel::DialogueWork DfErcModel::stage_features(
    const Dialogue& d, const ForwardOptions& opts,
    const std::vector<std::array<double, 3>>* frozen_tcp) const {
  const std::size_t n = d.utterances.size();
  if (n == 0) throw ValidationError("dialogue '" + d.dialogue_id + "' has no utterances");

  DialogueWork w;
  w.gold.reserve(n);
  for (const auto& u : d.utterances) w.gold.push_back(u.label);

  auto raw_dims = info_.raw_dims();
  std::array<std::vector<Tensor>, 3> raw;
  for (int m = 0; m < kModalities; ++m) {
    raw[m].reserve(n);
    for (const auto& u : d.utterances) {
      const auto& f = u.feat(m);
      if (f.size() != raw_dims[m]) {
        throw ValidationError("utterance '" + u.utt_id + "': " + kModalityNames[m] +
                              " dim " + std::to_string(f.size()) + " does not match model dim " +
                              std::to_string(raw_dims[m]));
      }
      Tensor x = variant_.use_modality[m] ? Tensor::of({f.size()}, f)
                                          : Tensor::zeros({f.size()});
      if (opts.training && opts.dropout > 0.0) {
        if (!opts.dropout_rng) throw std::invalid_argument("forward: dropout needs an rng");
        x = dropout(x, opts.dropout, *opts.dropout_rng);
      }
      raw[m].push_back(x);
    }
  }

  if (has_ddm_projections_) {
    DisentangledFeatures df = project_dual(raw, ddm_heads_);
    w.mod_proj = df.mod_proj;
    w.utt_proj = df.utt_proj;
    w.concat_feats = df.concat;
    switch (variant_.mech) {
      case Mechanism::no_utterance: {
        auto mod = supervised_contrastive_loss(df.interleaved_mod(), grouping_modality(n),
                                               cfg_.ddm.tau_m,
                                               cfg_.ddm.anchors_all
                                                   ? std::nullopt
                                                   : std::optional<std::size_t>(n));
        w.loss_cl = mod.loss;
        w.skipped_anchors = mod.skipped_anchors;
        break;
      }
      case Mechanism::no_modality: {
        auto utt = supervised_contrastive_loss(df.interleaved_utt(), grouping_utterance(n),
                                               cfg_.ddm.tau_u,
                                               cfg_.ddm.anchors_all
                                                   ? std::nullopt
                                                   : std::optional<std::size_t>(n));
        w.loss_cl = utt.loss;
        w.skipped_anchors = utt.skipped_anchors;
        break;
      }
      default: {
        auto r = ddm_loss(df, cfg_.ddm);
        w.loss_cl = r.total;
        w.skipped_anchors = r.skipped_anchors;
      }
    }
  } else {
    w.concat_feats = raw;
    w.loss_cl = Tensor::scalar(0.0);
  }

  // Shared-width adapters feeding the weighted fusion.
  ModalityFeatures adapted;
  for (int m = 0; m < kModalities; ++m) {
    adapted[m].reserve(n);
    for (const auto& x : w.concat_feats[m]) adapted[m].push_back(mlp_forward(x, adapters_[m]));
  }

  if (has_cfm_) {
    ModalityFeatures z = teacher_distributions(w.concat_feats, cfm_heads_);
    w.tcp = frozen_tcp ? *frozen_tcp : tcp_targets(z, w.gold);
    if (w.tcp.size() != n) throw std::invalid_argument("forward: frozen TCP length mismatch");
    ModalityFeatures omega = contribution_weights(w.concat_feats, cfm_heads_);
    w.loss_con = cfm_loss(z, w.tcp, omega, w.gold);
    w.fused = fuse(adapted, omega);
    w.omega_t.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      w.omega_t[i] = {omega[0][i], omega[1][i], omega[2][i]};
    }
  } else {
    w.loss_con = Tensor::scalar(0.0);
    w.tcp.assign(n, {0.0, 0.0, 0.0});
    if (variant_.mech == Mechanism::cfm_att) {
      w.fused.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        w.fused.push_back(fuse_with_attention({adapted[0][i], adapted[1][i], adapted[2][i]}));
      }
    } else {
      w.fused = fuse_fixed(adapted, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
    }
  }

  w.aligned = align_project(w.concat_feats, crm_heads_);
  return w;
}

Tensor DfErcModel::fuse_with_attention(const std::array<Tensor, 3>& u) const {
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.cfm.fusion_dim));
  Tensor scores = concat({scale(dot(att_query_, u[0]), inv_sqrt_d),
                          scale(dot(att_query_, u[1]), inv_sqrt_d),
                          scale(dot(att_query_, u[2]), inv_sqrt_d)});
  Tensor a = softmax(scores);
  return add_n({smul(pick(a, 0), u[0]), smul(pick(a, 1), u[1]), smul(pick(a, 2), u[2])});
}

Tensor DfErcModel::context_with_attention(const Tensor& hf, std::span<const Tensor> hc) const {
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(2 * cfg_.crm.context_hidden));
  Tensor q = mlp_forward(hf, att_context_);
  std::vector<Tensor> scores;
  scores.reserve(hc.size());
  for (const auto& h : hc) scores.push_back(scale(dot(q, h), inv_sqrt_d));
  Tensor a = softmax(concat(scores));
  std::vector<Tensor> weighted;
  weighted.reserve(hc.size());
  for (std::size_t j = 0; j < hc.size(); ++j) weighted.push_back(smul(pick(a, j), hc[j]));
  return add_n(weighted);
}

DialogueForward DfErcModel::finish(DialogueWork&& w, const ForwardOptions& opts) const {
  const std::size_t n = w.gold.size();
  DialogueForward out;
  out.loss_cl = w.loss_cl;
  out.loss_con = w.loss_con;
  out.skipped_anchors = w.skipped_anchors;

  out.loss_sim = prototype_margin_loss(prototypes_, w.aligned, w.gold, cfg_.crm.margin_beta);

  std::vector<Tensor> psi(n);
  for (std::size_t i = 0; i < n; ++i) {
    psi[i] = modality_consistency(w.aligned[0][i], w.aligned[1][i], w.aligned[2][i],
                                  cfg_.crm.clamp_psi);
  }

  std::vector<Tensor> hc = bilstm_forward(w.fused, context_);

  std::vector<Tensor> ce_terms;
  ce_terms.reserve(n);
  out.utts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor he;
    switch (variant_.mech) {
      case Mechanism::crm_full: he = refuse_context_static(w.fused[i], hc[i], 1.0); break;
      case Mechanism::crm_zero: he = refuse_context_static(w.fused[i], hc[i], 0.0); break;
      case Mechanism::crm_att:
        he = concat({w.fused[i], context_with_attention(w.fused[i], hc)});
        break;
      default: he = refuse_context(w.fused[i], hc[i], psi[i]);
    }
    Tensor y = softmax(mlp_forward(he, classifier_));
    Tensor p_gold = pick(y, static_cast<std::size_t>(w.gold[i]));
    Tensor ce = affine_map(log_clamped(p_gold), -1.0, 0.0);
    ce_terms.push_back(ce);

    UttForward& u = out.utts[i];
    u.gold = w.gold[i];
    auto yv = y.values();
    u.pred = 0;
    for (std::size_t k = 1; k < yv.size(); ++k) {
      if (yv[k] > yv[static_cast<std::size_t>(u.pred)]) u.pred = static_cast<int>(k);
    }
    u.p_gold = p_gold.item();
    u.ce = ce.item();
    u.psi = psi[i].item();
    u.tcp = w.tcp[i];
    for (int m = 0; m < kModalities; ++m) {
      u.omega[m] = w.omega_t.empty() ? 1.0 / 3.0 : w.omega_t[i][m].item();
    }
  }
  out.loss_emo = add_n(ce_terms);

  if (opts.collect_projections) {
    for (int m = 0; m < kModalities; ++m) {
      for (std::size_t i = 0; i < n; ++i) {
        auto mv = has_ddm_projections_ ? w.mod_proj[m][i].values() : std::span<const double>{};
        auto uv = has_ddm_projections_ ? w.utt_proj[m][i].values() : std::span<const double>{};
        out.mod_proj_values[m].emplace_back(mv.begin(), mv.end());
        out.utt_proj_values[m].emplace_back(uv.begin(), uv.end());
      }
    }
  }
  return out;
}

std::vector<DialogueForward> DfErcModel::forward_batch(std::span<const Dialogue* const> batch,
                                                       const ForwardOptions& opts) {
  if (batch.empty()) throw std::invalid_argument("forward_batch: empty batch");
  if (opts.frozen_tcp && opts.frozen_tcp->size() != batch.size()) {
    throw std::invalid_argument("forward_batch: frozen TCP batch size mismatch");
  }

  std::vector<DialogueWork> work;
  work.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    work.push_back(
        stage_features(*batch[b], opts, opts.frozen_tcp ? &(*opts.frozen_tcp)[b] : nullptr));
  }

  // Prototype update between the alignment pass and the margin loss, over
  // the whole batch in dialogue order. Values are detached: the store never
  // carries gradient.
  if (opts.update_prototypes) {
    std::vector<std::pair<int, std::vector<double>>> feed;
    for (const auto& w : work) {
      for (std::size_t i = 0; i < w.gold.size(); ++i) {
        for (int m = 0; m < kModalities; ++m) {
          auto xv = w.aligned[m][i].values();
          feed.emplace_back(w.gold[i], std::vector<double>(xv.begin(), xv.end()));
        }
      }
    }
    prototypes_.update(feed);
  }

  std::vector<DialogueForward> out;
  out.reserve(batch.size());
  for (auto& w : work) out.push_back(finish(std::move(w), opts));
  return out;
}

}  // namespace dferc
