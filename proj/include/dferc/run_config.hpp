#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "dferc/data.hpp"
#include "dferc/model.hpp"
#include "dferc/trainer.hpp"

namespace dferc {

nlohmann::json synth_config_to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

// One JSON document configures every command; CLI flags override file
// values. Shipped defaults are the synthetic benchmark presets.
struct RunConfig {
  SynthConfig data;
  ModelConfig model = bench_model_config();
  TrainConfig train = bench_train_config(1);
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  std::string out_dir;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
};

// Sets one numeric training hyperparameter by name (sweep command).
void apply_train_param(TrainConfig& tc, const std::string& name, double value);

}  // namespace dferc
