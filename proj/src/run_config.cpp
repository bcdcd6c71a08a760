#include "dferc/run_config.hpp"

#include <fstream>

namespace dferc {

using nlohmann::json;

json synth_config_to_json(const SynthConfig& c) {
  return {{"K", c.K},
          {"d_t", c.d_t},
          {"d_a", c.d_a},
          {"d_v", c.d_v},
          {"train_dialogues", c.train_dialogues},
          {"valid_dialogues", c.valid_dialogues},
          {"test_dialogues", c.test_dialogues},
          {"mean_len", c.mean_len},
          {"max_len", c.max_len},
          {"p_stay", c.p_stay},
          {"r_t", c.reliability[0]},
          {"r_a", c.reliability[1]},
          {"r_v", c.reliability[2]},
          {"sigma", c.sigma},
          {"rho", c.rho},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  c.K = j.value("K", c.K);
  c.d_t = j.value("d_t", c.d_t);
  c.d_a = j.value("d_a", c.d_a);
  c.d_v = j.value("d_v", c.d_v);
  c.train_dialogues = j.value("train_dialogues", c.train_dialogues);
  c.valid_dialogues = j.value("valid_dialogues", c.valid_dialogues);
  c.test_dialogues = j.value("test_dialogues", c.test_dialogues);
  c.mean_len = j.value("mean_len", c.mean_len);
  c.max_len = j.value("max_len", c.max_len);
  c.p_stay = j.value("p_stay", c.p_stay);
  c.reliability[0] = j.value("r_t", c.reliability[0]);
  c.reliability[1] = j.value("r_a", c.reliability[1]);
  c.reliability[2] = j.value("r_v", c.reliability[2]);
  c.sigma = j.value("sigma", c.sigma);
  c.rho = j.value("rho", c.rho);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  if (seeds.empty()) throw ValidationError("config: seed list is empty");
}

json RunConfig::to_json() const {
  return {{"data", synth_config_to_json(data)},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"seeds", seeds},
          {"paths",
           {{"train", train_path}, {"valid", valid_path}, {"test", test_path}, {"out", out_dir}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  if (j.contains("data")) c.data = synth_config_from_json(j.at("data"));
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    c.train_path = p.value("train", std::string());
    c.valid_path = p.value("valid", std::string());
    c.test_path = p.value("test", std::string());
    c.out_dir = p.value("out", std::string());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed config " + path + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw ValidationError("invalid config " + path + ": " + e.what());
  }
}

void apply_train_param(TrainConfig& tc, const std::string& name, double value) {
  if (name == "alpha1") tc.alpha1 = value;
  else if (name == "alpha2") tc.alpha2 = value;
  else if (name == "alpha3") tc.alpha3 = value;
  else if (name == "lr") tc.lr = value;
  else if (name == "weight_decay") tc.weight_decay = value;
  else if (name == "dropout") tc.dropout = value;
  else if (name == "epochs") tc.epochs = static_cast<long>(value);
  else if (name == "batch_size") tc.batch_size = static_cast<std::size_t>(value);
  else if (name == "warmup_steps") tc.warmup_steps = static_cast<long>(value);
  else if (name == "max_grad_norm") tc.max_grad_norm = value;
  else throw ValidationError("sweep: unknown parameter '" + name + "'");
  tc.validate();
}

}  // namespace dferc
