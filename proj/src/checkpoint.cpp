#include "dferc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "dferc/errors.hpp"

namespace dferc {

using nlohmann::json;

namespace {
constexpr char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string doubles_to_base64(std::span<const double> v) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  std::size_t n = v.size() * sizeof(double);
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    unsigned b0 = bytes[i];
    unsigned b1 = i + 1 < n ? bytes[i + 1] : 0;
    unsigned b2 = i + 2 < n ? bytes[i + 2] : 0;
    out.push_back(kB64Alphabet[b0 >> 2]);
    out.push_back(kB64Alphabet[((b0 & 0x3) << 4) | (b1 >> 4)]);
    out.push_back(i + 1 < n ? kB64Alphabet[((b1 & 0xF) << 2) | (b2 >> 6)] : '=');
    out.push_back(i + 2 < n ? kB64Alphabet[b2 & 0x3F] : '=');
  }
  return out;
}

std::vector<double> base64_to_doubles(const std::string& s) {
  if (s.size() % 4 != 0) throw ValidationError("checkpoint: malformed base64 block");
  std::vector<unsigned char> bytes;
  bytes.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    int v0 = b64_value(s[i]);
    int v1 = b64_value(s[i + 1]);
    if (v0 < 0 || v1 < 0) throw ValidationError("checkpoint: malformed base64 block");
    bytes.push_back(static_cast<unsigned char>((v0 << 2) | (v1 >> 4)));
    if (s[i + 2] != '=') {
      int v2 = b64_value(s[i + 2]);
      if (v2 < 0) throw ValidationError("checkpoint: malformed base64 block");
      bytes.push_back(static_cast<unsigned char>(((v1 & 0xF) << 4) | (v2 >> 2)));
      if (s[i + 3] != '=') {
        int v3 = b64_value(s[i + 3]);
        if (v3 < 0) throw ValidationError("checkpoint: malformed base64 block");
        bytes.push_back(static_cast<unsigned char>(((v2 & 0x3) << 6) | v3));
      }
    }
  }
  if (bytes.size() % sizeof(double) != 0) {
    throw ValidationError("checkpoint: base64 block is not a whole number of doubles");
  }
  std::vector<double> out(bytes.size() / sizeof(double));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

Checkpoint Checkpoint::of(const DfErcModel& model) {
  Checkpoint c;
  c.model_config = model.config();
  c.variant = model.variant();
  c.info = model.info();
  // Deep copy: the model keeps training after a snapshot is taken.
  for (const auto& [name, t] : model.parameters()) {
    auto v = t.values();
    c.params.emplace_back(name, Tensor::of(t.shape(), std::vector<double>(v.begin(), v.end())));
  }
  c.prototype_sums = model.prototypes().sums();
  c.prototype_counts = model.prototypes().counts();
  c.prototype_rounds = model.prototypes().round_index();
  return c;
}

DfErcModel DfErcModel_restore(const Checkpoint& c) {
  Rng scratch(0);
  DfErcModel model(c.model_config, c.info, c.variant, scratch);
  const auto& params = model.parameters();
  if (params.size() != c.params.size()) {
    throw ValidationError("checkpoint: parameter count mismatch (" +
                          std::to_string(c.params.size()) + " stored, model has " +
                          std::to_string(params.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != c.params[i].first) {
      throw ValidationError("checkpoint: parameter name mismatch at '" + c.params[i].first + "'");
    }
    Tensor dst = params[i].second;
    const Tensor& src = c.params[i].second;
    if (dst.shape() != src.shape()) {
      throw ValidationError("checkpoint: shape mismatch for '" + c.params[i].first + "'");
    }
    auto out = dst.mutable_values();
    auto in = src.values();
    std::copy(in.begin(), in.end(), out.begin());
  }
  model.prototypes().restore(c.prototype_sums, c.prototype_counts, c.prototype_rounds);
  return model;
}

DfErcModel Checkpoint::restore_model() const { return DfErcModel_restore(*this); }

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  json j;
  j["format"] = "dferc-checkpoint";
  j["format_version"] = c.format_version;
  j["model_config"] = c.model_config.to_json();
  j["variant"] = c.variant.name();
  j["dataset_info"] = c.info.to_json();
  j["train_config"] = c.train_config;
  j["rng_state"] = c.rng_state;
  j["epoch"] = c.epoch;
  j["step"] = c.step;
  j["best_epoch"] = c.best_epoch;

  json params = json::array();
  for (const auto& [name, t] : c.params) {
    params.push_back({{"name", name}, {"shape", t.shape()}, {"data", doubles_to_base64(t.values())}});
  }
  j["params"] = std::move(params);

  json protos = json::array();
  for (std::size_t k = 0; k < c.prototype_sums.size(); ++k) {
    protos.push_back({{"count", c.prototype_counts[k]},
                      {"sum", doubles_to_base64(c.prototype_sums[k])}});
  }
  j["prototypes"] = std::move(protos);
  j["prototype_rounds"] = c.prototype_rounds;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed checkpoint " + path + ": " + e.what());
  }
  if (j.value("format", std::string()) != "dferc-checkpoint") {
    throw ValidationError("not a checkpoint file: " + path);
  }
  Checkpoint c;
  c.format_version = j.at("format_version").get<int>();
  if (c.format_version != 1) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(c.format_version));
  }
  c.model_config = ModelConfig::from_json(j.at("model_config"));
  c.variant = VariantSpec::parse(j.at("variant").get<std::string>());
  c.info = DatasetInfo::from_json(j.at("dataset_info"));
  c.train_config = j.value("train_config", json::object());
  c.rng_state = j.value("rng_state", json::object());
  c.epoch = j.value("epoch", 0L);
  c.step = j.value("step", 0L);
  c.best_epoch = j.value("best_epoch", -1L);
  for (const auto& p : j.at("params")) {
    auto shape = p.at("shape").get<Shape>();
    auto data = base64_to_doubles(p.at("data").get<std::string>());
    c.params.emplace_back(p.at("name").get<std::string>(), Tensor::of(shape, std::move(data)));
  }
  for (const auto& pk : j.at("prototypes")) {
    c.prototype_counts.push_back(pk.at("count").get<long>());
    c.prototype_sums.push_back(base64_to_doubles(pk.at("sum").get<std::string>()));
  }
  c.prototype_rounds = j.value("prototype_rounds", 0L);
  return c;
}

}  // namespace dferc
