#include "dferc/data.hpp"

#include <zlib.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace dferc {

using nlohmann::json;

namespace {

bool has_gz_suffix(const std::string& path) {
  return path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

std::string read_text_file(const std::string& path) {
  if (has_gz_suffix(path)) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw ValidationError("cannot open dataset file: " + path);
    std::string out;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
    bool bad = n < 0;
    gzclose(f);
    if (bad) throw ValidationError("gzip read error in " + path);
    return out;
  }
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open dataset file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  if (has_gz_suffix(path)) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw ValidationError("cannot write dataset file: " + path);
    if (gzwrite(f, content.data(), static_cast<unsigned>(content.size())) !=
        static_cast<int>(content.size())) {
      gzclose(f);
      throw ValidationError("gzip write error in " + path);
    }
    gzclose(f);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write dataset file: " + path);
  f << content;
}

std::vector<double> parse_feat(const json& j, const char* key, const std::string& utt_id,
                               std::size_t expected, std::size_t line_no) {
  if (!j.contains(key)) {
    throw ValidationError("line " + std::to_string(line_no) + ": utterance '" + utt_id +
                          "' is missing modality vector '" + key + "'");
  }
  const json& arr = j.at(key);
  if (!arr.is_array()) {
    throw ValidationError("line " + std::to_string(line_no) + ": field '" + std::string(key) +
                          "' of utterance '" + utt_id + "' is not an array");
  }
  std::vector<double> v;
  v.reserve(arr.size());
  for (const auto& x : arr) {
    if (!x.is_number()) {
      throw ValidationError("line " + std::to_string(line_no) + ": non-numeric entry in '" +
                            std::string(key) + "' of utterance '" + utt_id + "'");
    }
    v.push_back(x.get<double>());
  }
  if (v.size() != expected) {
    throw ValidationError("line " + std::to_string(line_no) + ": utterance '" + utt_id + "': '" +
                          std::string(key) + "' has dim " + std::to_string(v.size()) +
                          ", manifest requires " + std::to_string(expected));
  }
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw ValidationError("line " + std::to_string(line_no) + ": non-finite value in '" +
                            std::string(key) + "' of utterance '" + utt_id + "'");
    }
  }
  return v;
}

json feat_json(const std::vector<double>& v) { return json(v); }

}  // namespace

void LabelSpace::validate() const {
  if (names.size() < 2) throw ValidationError("label space needs at least 2 emotions");
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size()) throw ValidationError("label space has duplicate names");
}

const std::vector<double>& Utterance::feat(int modality) const {
  switch (modality) {
    case 0: return text_feat;
    case 1: return audio_feat;
    case 2: return video_feat;
  }
  throw std::invalid_argument("modality index out of range");
}

std::size_t Dataset::utterance_count() const {
  std::size_t n = 0;
  for (const auto& d : dialogues) n += d.utterances.size();
  return n;
}

std::vector<long> Dataset::label_histogram() const {
  std::vector<long> h(manifest.label_space.K(), 0);
  for (const auto& d : dialogues) {
    for (const auto& u : d.utterances) h[static_cast<std::size_t>(u.label)]++;
  }
  return h;
}

void Dataset::validate() const {
  manifest.label_space.validate();
  const auto K = static_cast<int>(manifest.label_space.K());
  for (const auto& d : dialogues) {
    if (d.utterances.empty()) {
      throw ValidationError("dialogue '" + d.dialogue_id + "' has no utterances");
    }
    for (const auto& u : d.utterances) {
      if (u.label < 0 || u.label >= K) {
        throw ValidationError("utterance '" + u.utt_id + "': unknown label index " +
                              std::to_string(u.label) + " (K=" + std::to_string(K) + ")");
      }
      auto check_dim = [&](const std::vector<double>& v, std::size_t want, const char* name) {
        if (v.size() != want) {
          throw ValidationError("utterance '" + u.utt_id + "': " + name + " has dim " +
                                std::to_string(v.size()) + ", manifest requires " +
                                std::to_string(want));
        }
        for (double x : v) {
          if (!std::isfinite(x)) {
            throw ValidationError("utterance '" + u.utt_id + "': non-finite value in " + name);
          }
        }
      };
      check_dim(u.text_feat, manifest.d_t, "text_feat");
      check_dim(u.audio_feat, manifest.d_a, "audio_feat");
      check_dim(u.video_feat, manifest.d_v, "video_feat");
    }
  }
}

Dataset load_dataset(const std::string& path) {
  std::string content = read_text_file(path);
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;

  Dataset ds;
  bool have_manifest = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    if (!have_manifest) {
      try {
        ds.manifest.label_space.names = j.at("label_space").get<std::vector<std::string>>();
        ds.manifest.d_t = j.at("d_t").get<std::size_t>();
        ds.manifest.d_a = j.at("d_a").get<std::size_t>();
        ds.manifest.d_v = j.at("d_v").get<std::size_t>();
        ds.manifest.split_name = j.value("split_name", std::string());
      } catch (const json::exception& e) {
        throw ValidationError("line 1: malformed manifest: " + std::string(e.what()));
      }
      ds.manifest.label_space.validate();
      have_manifest = true;
      continue;
    }
    Dialogue d;
    if (!j.contains("dialogue_id") || !j.at("dialogue_id").is_string()) {
      throw ValidationError("line " + std::to_string(line_no) + ": missing dialogue_id");
    }
    d.dialogue_id = j.at("dialogue_id").get<std::string>();
    if (!j.contains("utterances") || !j.at("utterances").is_array() || j.at("utterances").empty()) {
      throw ValidationError("line " + std::to_string(line_no) + ": dialogue '" + d.dialogue_id +
                            "' has no utterances");
    }
    for (const auto& ju : j.at("utterances")) {
      Utterance u;
      u.utt_id = ju.value("utt_id", std::string());
      if (u.utt_id.empty()) {
        throw ValidationError("line " + std::to_string(line_no) + ": utterance without utt_id in '" +
                              d.dialogue_id + "'");
      }
      if (ju.contains("speaker") && !ju.at("speaker").is_null()) {
        u.speaker = ju.at("speaker").get<std::string>();
      }
      if (!ju.contains("label") || !ju.at("label").is_number_integer()) {
        throw ValidationError("line " + std::to_string(line_no) + ": utterance '" + u.utt_id +
                              "' is missing an integer label");
      }
      u.label = ju.at("label").get<int>();
      if (u.label < 0 || u.label >= static_cast<int>(ds.manifest.label_space.K())) {
        throw ValidationError("line " + std::to_string(line_no) + ": utterance '" + u.utt_id +
                              "': unknown label index " + std::to_string(u.label));
      }
      u.text_feat = parse_feat(ju, "text_feat", u.utt_id, ds.manifest.d_t, line_no);
      u.audio_feat = parse_feat(ju, "audio_feat", u.utt_id, ds.manifest.d_a, line_no);
      u.video_feat = parse_feat(ju, "video_feat", u.utt_id, ds.manifest.d_v, line_no);
      d.utterances.push_back(std::move(u));
    }
    ds.dialogues.push_back(std::move(d));
  }
  if (!have_manifest) throw ValidationError("dataset file is empty: " + path);
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ostringstream out;
  json manifest = {{"label_space", ds.manifest.label_space.names},
                   {"d_t", ds.manifest.d_t},
                   {"d_a", ds.manifest.d_a},
                   {"d_v", ds.manifest.d_v},
                   {"split_name", ds.manifest.split_name}};
  out << manifest.dump() << "\n";
  for (const auto& d : ds.dialogues) {
    json jd;
    jd["dialogue_id"] = d.dialogue_id;
    json utts = json::array();
    for (const auto& u : d.utterances) {
      json ju;
      ju["utt_id"] = u.utt_id;
      if (u.speaker) {
        ju["speaker"] = *u.speaker;
      } else {
        ju["speaker"] = nullptr;
      }
      ju["label"] = u.label;
      ju["text_feat"] = feat_json(u.text_feat);
      ju["audio_feat"] = feat_json(u.audio_feat);
      ju["video_feat"] = feat_json(u.video_feat);
      utts.push_back(std::move(ju));
    }
    jd["utterances"] = std::move(utts);
    out << jd.dump() << "\n";
  }
  write_text_file(path, out.str());
}

void SynthConfig::validate() const {
  if (K < 2) throw ValidationError("synth: K must be >= 2");
  if (d_t == 0 || d_a == 0 || d_v == 0) throw ValidationError("synth: feature dims must be positive");
  if (p_stay < 0.0 || p_stay > 1.0) throw ValidationError("synth: p_stay must be in [0,1]");
  for (double r : reliability) {
    if (r < 0.0 || r > 1.0) throw ValidationError("synth: reliability must be in [0,1]");
  }
  if (rho < 0.0 || rho > 1.0) throw ValidationError("synth: rho must be in [0,1]");
  if (sigma <= 0.0) throw ValidationError("synth: sigma must be positive");
  if (mean_len < 1.0) throw ValidationError("synth: mean_len must be >= 1");
  if (max_len < 1) throw ValidationError("synth: max_len must be >= 1");
}

namespace {

std::vector<std::array<std::vector<double>, 3>> make_latents(const SynthConfig& cfg) {
  Rng rng = Rng::substream(cfg.seed, "latents");
  std::vector<std::array<std::vector<double>, 3>> latents(cfg.K);
  const std::array<std::size_t, 3> dims = {cfg.d_t, cfg.d_a, cfg.d_v};
  for (std::size_t k = 0; k < cfg.K; ++k) {
    for (int m = 0; m < 3; ++m) {
      latents[k][m].resize(dims[m]);
      for (auto& x : latents[k][m]) x = rng.normal();
    }
  }
  return latents;
}

// Poisson with Knuth's product-of-uniforms method; fine for desk-scale rates.
std::size_t poisson(double lambda, Rng& rng) {
  if (lambda <= 0.0) return 0;
  double limit = std::exp(-lambda);
  std::size_t k = 0;
  double prod = rng.uniform();
  while (prod > limit) {
    ++k;
    prod *= rng.uniform();
  }
  return k;
}

std::size_t other_class(std::size_t k, std::size_t K, Rng& rng) {
  std::size_t j = rng.below(K - 1);
  return j >= k ? j + 1 : j;
}

Dialogue gen_dialogue(const SynthConfig& cfg,
                      const std::vector<std::array<std::vector<double>, 3>>& latents,
                      const std::string& split_name, std::size_t index) {
  Rng rng = Rng::substream(cfg.seed, "dialogue-" + split_name, index);
  std::size_t len = 1 + poisson(cfg.mean_len - 1.0, rng);
  len = std::min(len, cfg.max_len);

  Dialogue d;
  {
    std::ostringstream id;
    id << split_name << "-" << index;
    d.dialogue_id = id.str();
  }
  std::size_t label = rng.below(cfg.K);
  const std::array<std::size_t, 3> dims = {cfg.d_t, cfg.d_a, cfg.d_v};
  for (std::size_t i = 0; i < len; ++i) {
    if (i > 0 && !rng.bernoulli(cfg.p_stay)) label = other_class(label, cfg.K, rng);
    Utterance u;
    {
      std::ostringstream id;
      id << d.dialogue_id << "-u" << i;
      u.utt_id = id.str();
    }
    u.speaker = "spk" + std::to_string(i % 2);
    u.label = static_cast<int>(label);
    for (int m = 0; m < 3; ++m) {
      std::vector<double> f(dims[m]);
      const auto& mu = latents[label][m];
      double r = cfg.reliability[m];
      if (rng.bernoulli(r)) {
        for (std::size_t j = 0; j < f.size(); ++j) f[j] = mu[j];
      } else {
        const auto& wrong = latents[other_class(label, cfg.K, rng)][m];
        for (std::size_t j = 0; j < f.size(); ++j) f[j] = r * mu[j] + (1.0 - r) * wrong[j];
      }
      for (auto& x : f) x += cfg.sigma * rng.normal();
      switch (m) {
        case 0: u.text_feat = std::move(f); break;
        case 1: u.audio_feat = std::move(f); break;
        case 2: u.video_feat = std::move(f); break;
      }
    }
    // Consistency violation: one modality replaced by a clean wrong-class
    // sample, leaving the label and the other two modalities intact.
    if (rng.bernoulli(cfg.rho)) {
      int m = static_cast<int>(rng.below(3));
      const auto& wrong = latents[other_class(label, cfg.K, rng)][m];
      std::vector<double> f(dims[static_cast<std::size_t>(m)]);
      for (std::size_t j = 0; j < f.size(); ++j) f[j] = wrong[j] + cfg.sigma * rng.normal();
      switch (m) {
        case 0: u.text_feat = std::move(f); break;
        case 1: u.audio_feat = std::move(f); break;
        case 2: u.video_feat = std::move(f); break;
      }
    }
    d.utterances.push_back(std::move(u));
  }
  return d;
}

Dataset gen_split(const SynthConfig& cfg,
                  const std::vector<std::array<std::vector<double>, 3>>& latents,
                  const std::string& split_name, std::size_t n) {
  Dataset ds;
  for (std::size_t k = 0; k < cfg.K; ++k) {
    ds.manifest.label_space.names.push_back("emotion" + std::to_string(k));
  }
  ds.manifest.d_t = cfg.d_t;
  ds.manifest.d_a = cfg.d_a;
  ds.manifest.d_v = cfg.d_v;
  ds.manifest.split_name = split_name;
  ds.dialogues.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ds.dialogues.push_back(gen_dialogue(cfg, latents, split_name, i));
  return ds;
}

}  // namespace

SynthOutput generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SynthOutput out;
  out.latents = make_latents(cfg);
  out.train = gen_split(cfg, out.latents, "train", cfg.train_dialogues);
  out.valid = gen_split(cfg, out.latents, "valid", cfg.valid_dialogues);
  out.test = gen_split(cfg, out.latents, "test", cfg.test_dialogues);
  return out;
}

Dataset generate_synthetic_split(const SynthConfig& cfg, const std::string& split_name,
                                 std::size_t n_dialogues) {
  cfg.validate();
  return gen_split(cfg, make_latents(cfg), split_name, n_dialogues);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n_dialogues,
                                                   std::size_t batch_size, Rng& shuffle_rng) {
  if (n_dialogues == 0) throw ValidationError("make_batches: empty dataset");
  if (batch_size == 0) throw ValidationError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(n_dialogues);
  for (std::size_t i = 0; i < n_dialogues; ++i) order[i] = i;
  shuffle_rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n_dialogues; start += batch_size) {
    std::size_t end = std::min(start + batch_size, n_dialogues);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace dferc
