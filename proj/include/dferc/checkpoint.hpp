#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "dferc/model.hpp"

namespace dferc {

// Self-describing versioned checkpoint: model configuration, every parameter
// tensor by canonical name (base64-encoded little-endian f64), the prototype
// store, the training-config snapshot, RNG states and counters. Round-trips
// bit-exactly.
struct Checkpoint {
  int format_version = 1;
  ModelConfig model_config;
  VariantSpec variant;
  DatasetInfo info;
  nlohmann::json train_config;  // snapshot, opaque here
  nlohmann::json rng_state;     // named substream states
  long epoch = 0;
  long step = 0;
  long best_epoch = -1;

  std::vector<std::pair<std::string, Tensor>> params;  // name -> tensor (values only)
  std::vector<std::vector<double>> prototype_sums;
  std::vector<long> prototype_counts;
  long prototype_rounds = 0;

  static Checkpoint of(const DfErcModel& model);
  // Rebuilds a model and overwrites its parameters and prototype store.
  DfErcModel restore_model() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Base64 of the raw little-endian f64 bytes (RFC 4648 with padding).
std::string doubles_to_base64(std::span<const double> v);
std::vector<double> base64_to_doubles(const std::string& s);

}  // namespace dferc
