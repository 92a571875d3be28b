#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "hale/common.hpp"

namespace hale {

enum class LossKind { HaLE, SamNeg, AdvNeg, AllNeg, NonNeg };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::HaLE: return "hale";
    case LossKind::SamNeg: return "samneg";
    case LossKind::AdvNeg: return "advneg";
    case LossKind::AllNeg: return "allneg";
    case LossKind::NonNeg: return "nonneg";
  }
  return "?";
}

inline LossKind loss_from_string(const std::string& s) {
  if (s == "hale") return LossKind::HaLE;
  if (s == "samneg") return LossKind::SamNeg;
  if (s == "advneg") return LossKind::AdvNeg;
  if (s == "allneg") return LossKind::AllNeg;
  if (s == "nonneg") return LossKind::NonNeg;
  throw ConfigError("unknown loss: " + s);
}

struct LossSpec {
  LossKind kind = LossKind::HaLE;
  double lambda = 0.5;          // alignment/uniformity balance (HaLE)
  double sample_alpha = 0.1;    // query-sampling proportion in [0,1] (HaLE)
  int neg_count = 50;           // negatives per positive k (SamNeg/AdvNeg)
  double margin = 2.0;          // additive margin (SamNeg/AdvNeg)
  double adv_temperature = 1.0; // self-adversarial temperature tau (AdvNeg)
  double reg_weight = 1.0;      // mu (NonNeg)
  double reg_radius = 1.0;      // rho (NonNeg)
  bool pos_square = true;       // square the activated positive scores (HaLE)

  void validate() const {
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
    if (sample_alpha < 0 || sample_alpha > 1)
      throw ConfigError("alpha must be in [0,1]");
    if (neg_count < 1) throw ConfigError("neg-count must be >= 1");
    if (adv_temperature <= 0) throw ConfigError("adv-temperature must be > 0");
    if (reg_weight < 0) throw ConfigError("reg-weight must be >= 0");
    if (reg_radius < 0) throw ConfigError("reg-radius must be >= 0");
  }
};

// max(s) + log sum exp(s - max): overflow-safe for any finite inputs.
inline double lse(std::span<const double> scores) {
  if (scores.empty()) throw Error("lse: empty input");
  double m = scores[0];
  for (double s : scores) m = std::max(m, s);
  double acc = 0.0;
  for (double s : scores) acc += std::exp(s - m);
  return m + std::log(acc);
}

inline double logistic(double x) {
  // Evaluate on the non-positive side only; exp never overflows.
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// -log sigma(x), stable for large |x|.
inline double softplus_neg(double x) {
  if (x >= 0.0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

// ---- query sampling ------------------------------------------------------------

struct QuerySample {
  std::vector<std::size_t> indices;
  long epoch = 0;
};

// Uniform without replacement, |indices| = round(alpha * n). Partial
// Fisher-Yates over a scratch identity array; output order is the draw order.
inline QuerySample sample_queries(std::size_t n, double alpha, Rng& rng,
                                  long epoch = 0) {
  if (alpha < 0.0 || alpha > 1.0) throw Error("sample_queries: alpha outside [0,1]");
  const auto m = static_cast<std::size_t>(std::llround(alpha * static_cast<double>(n)));
  QuerySample qs;
  qs.epoch = epoch;
  qs.indices.reserve(m);
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(pool[i], pool[j]);
    qs.indices.push_back(pool[i]);
  }
  return qs;
}

// ---- loss functions --------------------------------------------------------------
//
// All scores passed in are f_ha values (non-positive).

// Query Sampling loss: lambda * mean over positives of the alignment term,
// plus mean over sampled rows of LSE(row). The alignment term enters with a
// POSITIVE sign in both variants: minimizing h(c_r d^2)^2 (or h itself when
// pos_square is off) drives the positive-pair distance toward zero; with a
// negative sign gradient descent would reward growing it.
inline double hale_loss(std::span<const double> pos_scores,
                        const std::vector<std::vector<double>>& sampled_rows,
                        const LossSpec& spec) {
  double align = 0.0;
  for (double f : pos_scores) {
    align += spec.pos_square ? f * f : -f;
  }
  if (!pos_scores.empty()) align /= static_cast<double>(pos_scores.size());

  double uniform = 0.0;
  if (!sampled_rows.empty()) {
    const std::size_t n_e = sampled_rows.front().size();
    for (const auto& row : sampled_rows) {
      if (row.size() != n_e) throw Error("hale_loss: ragged score rows");
      uniform += lse(row);
    }
    uniform /= static_cast<double>(sampled_rows.size());
  }
  return spec.lambda * align + uniform;
}

// Cross-entropy of the target among all entities: -row[pos] + LSE(row).
inline double allneg_loss(std::size_t pos_index, std::span<const double> row) {
  if (pos_index >= row.size()) throw Error("allneg_loss: index out of range");
  return -row[pos_index] + lse(row);
}

// Square alignment loss plus the global spread regularizer
// g(E) = mean_i (||e_i - mean(E)||^2 - rho)^2.
inline double entity_spread_penalty(std::span<const double> entity_matrix,
                                    std::size_t n, int dim, double rho) {
  if (n == 0) return 0.0;
  std::vector<double> centroid(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* e = entity_matrix.data() + i * dim;
    for (int j = 0; j < dim; ++j) centroid[j] += e[j];
  }
  for (int j = 0; j < dim; ++j) centroid[j] /= static_cast<double>(n);
  double g = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* e = entity_matrix.data() + i * dim;
    double r = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double d = e[j] - centroid[j];
      r += d * d;
    }
    const double excess = r - rho;
    g += excess * excess;
  }
  return g / static_cast<double>(n);
}

inline double nonneg_loss(std::span<const double> pos_scores,
                          std::span<const double> entity_matrix, std::size_t n,
                          int dim, const LossSpec& spec) {
  double align = 0.0;
  for (double f : pos_scores) align += f * f;
  if (!pos_scores.empty()) align /= static_cast<double>(pos_scores.size());
  return align +
         spec.reg_weight * entity_spread_penalty(entity_matrix, n, dim,
                                                 spec.reg_radius);
}

// Logistic BCE with additive margin: -log s(pos + m) - mean_i log s(-neg_i - m).
inline double samneg_loss(double pos_score, std::span<const double> neg_scores,
                          double margin) {
  if (neg_scores.empty()) throw Error("samneg_loss: need at least one negative");
  double loss = softplus_neg(pos_score + margin);
  double neg = 0.0;
  for (double s : neg_scores) neg += softplus_neg(-s - margin);
  return loss + neg / static_cast<double>(neg_scores.size());
}

inline void adv_weights(std::span<const double> neg_scores, double tau,
                        std::vector<double>& w) {
  w.resize(neg_scores.size());
  double m = neg_scores[0];
  for (double s : neg_scores) m = std::max(m, s);
  double acc = 0.0;
  for (std::size_t i = 0; i < neg_scores.size(); ++i) {
    w[i] = std::exp((neg_scores[i] - m) / tau);
    acc += w[i];
  }
  for (auto& x : w) x /= acc;
}

// Self-adversarial variant: negative terms weighted by softmax(neg/tau).
// Weights are constants (no gradient flows through them).
inline double advneg_loss(double pos_score, std::span<const double> neg_scores,
                          double margin, double tau,
                          const std::vector<double>* frozen_weights = nullptr) {
  if (neg_scores.empty()) throw Error("advneg_loss: need at least one negative");
  std::vector<double> w_local;
  const std::vector<double>* w = frozen_weights;
  if (!w) {
    adv_weights(neg_scores, tau, w_local);
    w = &w_local;
  }
  double loss = softplus_neg(pos_score + margin);
  for (std::size_t i = 0; i < neg_scores.size(); ++i) {
    loss += (*w)[i] * softplus_neg(-neg_scores[i] - margin);
  }
  return loss;
}

// Both sides of the all-negative/non-negative reorganization identity, in
// unnormalized-sum form. Test oracle only.
//   LHS = sum_{T \ That}(-f) + sum_{That}(-f + LSE(row))
//   RHS = sum_T(-f)          + sum_{That} LSE(row)
inline std::pair<double, double> combined_loss_reference(
    std::span<const double> triple_scores,
    const std::vector<std::size_t>& sampled,
    const std::vector<std::vector<double>>& rows) {
  if (sampled.size() != rows.size())
    throw Error("combined_loss_reference: sample/row count mismatch");
  std::vector<char> in_sample(triple_scores.size(), 0);
  for (std::size_t idx : sampled) in_sample.at(idx) = 1;

  double lhs = 0.0;
  for (std::size_t i = 0; i < triple_scores.size(); ++i) {
    if (!in_sample[i]) lhs += -triple_scores[i];
  }
  for (std::size_t k = 0; k < sampled.size(); ++k) {
    lhs += -triple_scores[sampled[k]] + lse(rows[k]);
  }

  double rhs = 0.0;
  for (double f : triple_scores) rhs += -f;
  for (const auto& row : rows) rhs += lse(row);
  return {lhs, rhs};
}

}  // namespace hale
