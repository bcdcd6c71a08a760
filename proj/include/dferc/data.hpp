#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dferc/errors.hpp"
#include "dferc/rng.hpp"

namespace dferc {

struct LabelSpace {
  std::vector<std::string> names;

  std::size_t K() const { return names.size(); }
  void validate() const;
  bool operator==(const LabelSpace&) const = default;
};

struct Utterance {
  std::string utt_id;
  std::optional<std::string> speaker;
  int label = 0;  // gold emotion index in [0, K)
  std::vector<double> text_feat;
  std::vector<double> audio_feat;
  std::vector<double> video_feat;

  const std::vector<double>& feat(int modality) const;  // 0=text, 1=audio, 2=video
  bool operator==(const Utterance&) const = default;
};

struct Dialogue {
  std::string dialogue_id;
  std::vector<Utterance> utterances;  // conversational time order
  bool operator==(const Dialogue&) const = default;
};

struct DatasetManifest {
  LabelSpace label_space;
  std::size_t d_t = 0;
  std::size_t d_a = 0;
  std::size_t d_v = 0;
  std::string split_name;
  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Dialogue> dialogues;

  std::size_t utterance_count() const;
  std::vector<long> label_histogram() const;
  // Checks every invariant (dims, label range, finiteness) and throws
  // ValidationError with the offending utt_id on the first violation.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

// JSON Lines on disk: first line is the manifest object, each further line
// one dialogue. Paths ending in .gz are gzip-compressed.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

// Synthetic conversational-emotion benchmark with planted multimodal and
// contextual structure. Defaults are the stock desk-scale benchmark.
struct SynthConfig {
  std::size_t K = 6;
  std::size_t d_t = 16;
  std::size_t d_a = 12;
  std::size_t d_v = 10;
  std::size_t train_dialogues = 300;
  std::size_t valid_dialogues = 60;
  std::size_t test_dialogues = 60;
  double mean_len = 8.0;
  std::size_t max_len = 16;
  double p_stay = 0.7;                  // emotion Markov-chain persistence
  std::array<double, 3> reliability = {0.9, 0.6, 0.5};  // r_t, r_a, r_v
  double sigma = 0.4;                   // Gaussian feature noise
  double rho = 0.2;                     // per-utterance inconsistency rate
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthOutput {
  Dataset train;
  Dataset valid;
  Dataset test;
  // latents[k][m] is the class-k latent for modality m; shared across splits.
  std::vector<std::array<std::vector<double>, 3>> latents;
};

SynthOutput generate_synthetic(const SynthConfig& cfg);

// One split only (same latents as the full benchmark for this seed).
Dataset generate_synthetic_split(const SynthConfig& cfg, const std::string& split_name,
                                 std::size_t n_dialogues);

// Seeded shuffle of dialogue indices grouped into batches of whole
// dialogues; the last partial batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n_dialogues,
                                                   std::size_t batch_size, Rng& shuffle_rng);

}  // namespace dferc
