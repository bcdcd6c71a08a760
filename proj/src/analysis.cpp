#include "dferc/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>

#include "dferc/ddm.hpp"

namespace dferc {

namespace {

void csv_number(std::ostream& out, double v) {
  out << std::setprecision(12) << v;
}

}  // namespace

std::vector<std::vector<std::size_t>> quantile_groups(const std::vector<double>& values,
                                                      std::size_t k) {
  if (k == 0) throw std::invalid_argument("quantile_groups: k must be positive");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::vector<std::size_t>> groups(k);
  std::size_t n = values.size();
  for (std::size_t g = 0; g < k; ++g) {
    std::size_t lo = g * n / k;
    std::size_t hi = (g + 1) * n / k;
    groups[g].assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                     order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  return groups;
}

void write_similarity_quintiles_csv(const EvalDetails& details, const LabelSpace& labels,
                                    std::ostream& out) {
  std::vector<double> psi;
  psi.reserve(details.utts.size());
  for (const auto& u : details.utts) psi.push_back(u.psi);
  auto groups = quantile_groups(psi, 5);

  out << "quintile,count,psi_mean,accuracy,weighted_f1\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& idx = groups[g];
    double psi_sum = 0.0;
    std::vector<int> gold, pred;
    for (std::size_t i : idx) {
      psi_sum += details.utts[i].psi;
      gold.push_back(details.utts[i].gold);
      pred.push_back(details.utts[i].pred);
    }
    Metrics m = idx.empty() ? Metrics{} : Metrics::from_predictions(gold, pred, labels);
    out << (g + 1) << "," << idx.size() << ",";
    csv_number(out, idx.empty() ? 0.0 : psi_sum / static_cast<double>(idx.size()));
    out << ",";
    csv_number(out, m.accuracy);
    out << ",";
    csv_number(out, m.weighted_f1);
    out << "\n";
  }
}

void write_weight_by_ce_csv(const EvalDetails& details, std::ostream& out) {
  std::vector<double> ce;
  ce.reserve(details.utts.size());
  for (const auto& u : details.utts) ce.push_back(u.ce);
  auto groups = quantile_groups(ce, 4);

  out << "quartile,count,ce_mean,omega_text,omega_audio,omega_video,accuracy\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& idx = groups[g];
    double ce_sum = 0.0;
    std::array<double, 3> omega_sum = {0, 0, 0};
    long correct = 0;
    for (std::size_t i : idx) {
      const auto& u = details.utts[i];
      ce_sum += u.ce;
      for (int m = 0; m < 3; ++m) omega_sum[m] += u.omega[m];
      if (u.gold == u.pred) ++correct;
    }
    double inv = idx.empty() ? 0.0 : 1.0 / static_cast<double>(idx.size());
    out << (g + 1) << "," << idx.size() << ",";
    csv_number(out, ce_sum * inv);
    for (int m = 0; m < 3; ++m) {
      out << ",";
      csv_number(out, omega_sum[m] * inv);
    }
    out << ",";
    csv_number(out, static_cast<double>(correct) * inv);
    out << "\n";
  }
}

void write_tcp_mse_csv(const EvalDetails& details, std::ostream& out) {
  out << "dialogue_id,utt_id,modality,tcp,omega,sq_err\n";
  for (const auto& u : details.utts) {
    for (int m = 0; m < kModalities; ++m) {
      double d = u.tcp[m] - u.omega[m];
      out << u.dialogue_id << "," << u.utt_id << "," << kModalityNames[m] << ",";
      csv_number(out, u.tcp[m]);
      out << ",";
      csv_number(out, u.omega[m]);
      out << ",";
      csv_number(out, d * d);
      out << "\n";
    }
  }
}

std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& rows) {
  std::vector<std::array<double, 2>> out(rows.size(), {0.0, 0.0});
  if (rows.empty()) return out;
  std::size_t d = rows[0].size();
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument("pca_2d: ragged rows");
  }
  if (d == 0) return out;

  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < d; ++i) mean[i] += r[i];
  }
  for (auto& m : mean) m /= static_cast<double>(rows.size());

  std::vector<double> cov(d * d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < d; ++i) {
      double ci = r[i] - mean[i];
      for (std::size_t j = i; j < d; ++j) cov[i * d + j] += ci * (r[j] - mean[j]);
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov[i * d + j] /= static_cast<double>(rows.size());
      cov[j * d + i] = cov[i * d + j];
    }
  }

  // Top-2 eigenvectors by power iteration with deflation. Deterministic
  // pseudo-random start so ties do not depend on memory layout.
  auto power_iterate = [&](std::vector<double>& matrix) {
    Rng rng(42);
    std::vector<double> v(d);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    double lambda = 0.0;
    for (int iter = 0; iter < 500; ++iter) {
      std::vector<double> w(d, 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        const double* row = matrix.data() + i * d;
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += row[j] * v[j];
        w[i] = s;
      }
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-300) break;
      for (auto& x : w) x /= norm;
      double delta = 0.0;
      for (std::size_t i = 0; i < d; ++i) delta = std::max(delta, std::fabs(w[i] - v[i]));
      v = w;
      lambda = norm;
      if (delta < 1e-13) break;
    }
    // Sign convention: largest-magnitude component positive.
    std::size_t imax = 0;
    for (std::size_t i = 1; i < d; ++i) {
      if (std::fabs(v[i]) > std::fabs(v[imax])) imax = i;
    }
    if (v[imax] < 0) {
      for (auto& x : v) x = -x;
    }
    return std::make_pair(v, lambda);
  };

  auto [v1, l1] = power_iterate(cov);
  std::vector<double> deflated = cov;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) deflated[i * d + j] -= l1 * v1[i] * v1[j];
  }
  auto [v2, l2] = power_iterate(deflated);
  (void)l2;

  for (std::size_t r = 0; r < rows.size(); ++r) {
    double x = 0.0, y = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double c = rows[r][i] - mean[i];
      x += c * v1[i];
      y += c * v2[i];
    }
    out[r] = {x, y};
  }
  return out;
}

void write_projection_csv(const std::array<std::vector<std::vector<double>>, 3>& proj,
                          std::ostream& out) {
  std::vector<std::vector<double>> rows;
  std::vector<int> modality;
  std::vector<std::size_t> utterance;
  std::size_t n = proj[0].size();
  for (std::size_t i = 0; i < n; ++i) {
    for (int m = 0; m < kModalities; ++m) {
      rows.push_back(proj[m][i]);
      modality.push_back(m);
      utterance.push_back(i);
    }
  }
  auto coords = pca_2d(rows);
  out << "x,y,modality,utterance\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    csv_number(out, coords[r][0]);
    out << ",";
    csv_number(out, coords[r][1]);
    out << "," << kModalityNames[modality[r]] << "," << utterance[r] << "\n";
  }
}

}  // namespace dferc
