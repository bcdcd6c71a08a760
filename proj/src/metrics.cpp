#include "dferc/metrics.hpp"

namespace dferc {

Metrics Metrics::from_confusion(const std::vector<std::vector<long>>& confusion,
                                const LabelSpace& labels) {
  const std::size_t K = labels.K();
  if (confusion.size() != K) throw ValidationError("metrics: confusion matrix size mismatch");
  for (const auto& row : confusion) {
    if (row.size() != K) throw ValidationError("metrics: confusion matrix is not square");
  }

  Metrics m;
  m.confusion = confusion;
  long total = 0, correct = 0;
  for (std::size_t g = 0; g < K; ++g) {
    for (std::size_t p = 0; p < K; ++p) {
      total += confusion[g][p];
      if (g == p) correct += confusion[g][p];
    }
  }
  m.total = total;
  m.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

  for (std::size_t k = 0; k < K; ++k) {
    long tp = confusion[k][k];
    long actual = 0, predicted = 0;
    for (std::size_t j = 0; j < K; ++j) {
      actual += confusion[k][j];
      predicted += confusion[j][k];
    }
    ClassMetrics cm;
    cm.label = labels.names[k];
    cm.support = actual;
    cm.precision = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    cm.recall = actual > 0 ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    cm.f1 = (cm.precision + cm.recall) > 0.0
                ? 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall)
                : 0.0;
    if (total > 0) {
      m.weighted_f1 += (static_cast<double>(actual) / static_cast<double>(total)) * cm.f1;
    }
    m.per_class.push_back(std::move(cm));
  }
  return m;
}

Metrics Metrics::from_predictions(const std::vector<int>& gold, const std::vector<int>& pred,
                                  const LabelSpace& labels) {
  if (gold.size() != pred.size()) throw ValidationError("metrics: gold/pred length mismatch");
  const std::size_t K = labels.K();
  std::vector<std::vector<long>> confusion(K, std::vector<long>(K, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= static_cast<int>(K) || pred[i] < 0 ||
        pred[i] >= static_cast<int>(K)) {
      throw ValidationError("metrics: label index out of range");
    }
    confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(pred[i])]++;
  }
  return from_confusion(confusion, labels);
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json per_class_json = nlohmann::json::array();
  for (const auto& c : per_class) {
    per_class_json.push_back({{"label", c.label},
                              {"precision", c.precision},
                              {"recall", c.recall},
                              {"f1", c.f1},
                              {"support", c.support}});
  }
  return {{"accuracy", accuracy},
          {"weighted_f1", weighted_f1},
          {"total", total},
          {"per_class", per_class_json},
          {"confusion", confusion}};
}

}  // namespace dferc
