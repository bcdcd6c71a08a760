#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "dferc/data.hpp"

namespace dferc {

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
};

struct Metrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<long>> confusion;  // [gold][pred]
  long total = 0;

  // Classes with no predicted and no actual positives get F1 = 0; weighted
  // F1 weights each class by support/total.
  static Metrics from_confusion(const std::vector<std::vector<long>>& confusion,
                                const LabelSpace& labels);
  static Metrics from_predictions(const std::vector<int>& gold, const std::vector<int>& pred,
                                  const LabelSpace& labels);

  nlohmann::json to_json() const;
};

}  // namespace dferc
