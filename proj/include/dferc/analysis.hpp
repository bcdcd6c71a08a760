#pragma once

#include <array>
#include <ostream>
#include <string>
#include <vector>

#include "dferc/trainer.hpp"

namespace dferc {

// Evenly sized quantile groups over values sorted ascending: group g holds
// indices [g*n/k, (g+1)*n/k), so sizes differ by at most one.
std::vector<std::vector<std::size_t>> quantile_groups(const std::vector<double>& values,
                                                      std::size_t k);

// Utterances grouped into 5 quantiles of the consistency score psi. Columns:
// quintile,count,psi_mean,accuracy,weighted_f1
void write_similarity_quintiles_csv(const EvalDetails& details, const LabelSpace& labels,
                                    std::ostream& out);

// Utterances grouped into 4 quantiles of per-utterance cross-entropy,
// ascending. Columns: quartile,count,ce_mean,omega_text,omega_audio,
// omega_video,accuracy
void write_weight_by_ce_csv(const EvalDetails& details, std::ostream& out);

// One row per (utterance, modality). Columns:
// dialogue_id,utt_id,modality,tcp,omega,sq_err
void write_tcp_mse_csv(const EvalDetails& details, std::ostream& out);

// 2-D PCA of a set of row vectors (power iteration with deflation).
// Returns one (x, y) pair per row.
std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& rows);

// 2-D projections of one DDM space, one row per (utterance, modality).
// Columns: x,y,modality,utterance
void write_projection_csv(const std::array<std::vector<std::vector<double>>, 3>& proj,
                          std::ostream& out);

}  // namespace dferc
