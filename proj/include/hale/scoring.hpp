#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "hale/activation.hpp"
#include "hale/common.hpp"

namespace hale {

enum class Model { TransE, DistMult, RotatE, RotE, RotL };

inline const char* to_string(Model m) {
  switch (m) {
    case Model::TransE: return "transe";
    case Model::DistMult: return "distmult";
    case Model::RotatE: return "rotate";
    case Model::RotE: return "rote";
    case Model::RotL: return "rotl";
  }
  return "?";
}

inline Model model_from_string(const std::string& s) {
  if (s == "transe") return Model::TransE;
  if (s == "distmult") return Model::DistMult;
  if (s == "rotate") return Model::RotatE;
  if (s == "rote") return Model::RotE;
  if (s == "rotl") return Model::RotL;
  throw ConfigError("unknown model: " + s);
}

inline bool model_uses_rotation(Model m) {
  return m == Model::RotatE || m == Model::RotE || m == Model::RotL;
}

inline bool model_uses_second_vector(Model m) {
  return m == Model::RotE || m == Model::RotL;
}

struct ModelSpec {
  Model kind = Model::RotE;
  int dim = 32;

  void validate() const {
    if (dim < 2) throw ConfigError("dim must be >= 2");
    if (model_uses_rotation(kind) && dim % 2 != 0)
      throw ConfigError("rotation models need an even dim");
  }
};

// All trainable state. Every block is allocated regardless of model so that
// checkpoints are uniform and unused blocks provably carry zero gradient.
struct ParameterSet {
  std::int32_t n_entities = 0;
  std::int32_t n_relations = 0;  // effective count (2 * n_R after augmentation)
  int dim = 0;

  std::vector<double> entity;           // n_entities x dim
  std::vector<double> rel_translation;  // n_relations x dim (r; DistMult's multiplier)
  std::vector<double> rel_second;       // n_relations x dim (r')
  std::vector<double> rel_angles;       // n_relations x dim/2, radians
  std::vector<double> rel_scale;        // n_relations (c_r, kept positive)
  std::vector<double> rel_flex;         // n_relations (RotL flexible-add scalar)

  void allocate(std::int32_t ne, std::int32_t nr, int d) {
    n_entities = ne;
    n_relations = nr;
    dim = d;
    entity.assign(static_cast<std::size_t>(ne) * d, 0.0);
    rel_translation.assign(static_cast<std::size_t>(nr) * d, 0.0);
    rel_second.assign(static_cast<std::size_t>(nr) * d, 0.0);
    rel_angles.assign(static_cast<std::size_t>(nr) * (d / 2), 0.0);
    rel_scale.assign(nr, 1.0);
    rel_flex.assign(nr, 1.0);
  }

  std::span<double> entity_row(std::int32_t i) {
    return {entity.data() + static_cast<std::size_t>(i) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<const double> entity_row(std::int32_t i) const {
    return {entity.data() + static_cast<std::size_t>(i) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<const double> translation_row(std::int32_t r) const {
    return {rel_translation.data() + static_cast<std::size_t>(r) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<const double> second_row(std::int32_t r) const {
    return {rel_second.data() + static_cast<std::size_t>(r) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<const double> angles_row(std::int32_t r) const {
    return {rel_angles.data() + static_cast<std::size_t>(r) * (dim / 2),
            static_cast<std::size_t>(dim / 2)};
  }
};

// ---- vector kernels ----------------------------------------------------------

// Block-diagonal 2x2 rotation: coordinate pair (v[2i], v[2i+1]) turns by
// angles[i]. Norm-preserving.
inline void rotate(std::span<const double> angles, std::span<const double> v,
                   std::span<double> out) {
  if (v.size() % 2 != 0) throw Error("rotate: odd dimension");
  if (angles.size() * 2 != v.size())
    throw Error("rotate: need dim/2 angles");
  for (std::size_t i = 0; i < angles.size(); ++i) {
    const double c = std::cos(angles[i]);
    const double s = std::sin(angles[i]);
    const double a = v[2 * i];
    const double b = v[2 * i + 1];
    out[2 * i] = c * a - s * b;
    out[2 * i + 1] = s * a + c * b;
  }
}

// alpha * (x + y) / (1 - <x, y>). A denominator within 1e-6 of zero is
// clamped to sign(.)*1e-6; callers can count that via the saturated flag.
inline constexpr double kFlexDenomFloor = 1e-6;

inline void flexible_add(std::span<const double> x, std::span<const double> y,
                         double alpha, std::span<double> out,
                         bool* saturated = nullptr) {
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  double den = 1.0 - dot;
  if (std::abs(den) < kFlexDenomFloor) {
    den = den < 0.0 ? -kFlexDenomFloor : kFlexDenomFloor;
    if (saturated) *saturated = true;
  } else if (saturated) {
    *saturated = false;
  }
  const double scale = alpha / den;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = scale * (x[i] + y[i]);
}

inline double squared_distance(std::span<const double> a,
                               std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Psi(q, e) = -||q - e||_2^2.
inline double similarity(std::span<const double> q, std::span<const double> e) {
  if (q.size() != e.size()) throw Error("similarity: dimension mismatch");
  return -squared_distance(q, e);
}

// Query vector q = Phi(e_h, r) for the configured transform.
inline void transform(const ModelSpec& model, const ParameterSet& p,
                      std::int32_t h, std::int32_t r, std::span<double> q) {
  const auto e_h = p.entity_row(h);
  switch (model.kind) {
    case Model::TransE: {
      const auto t = p.translation_row(r);
      for (int i = 0; i < p.dim; ++i) q[i] = e_h[i] + t[i];
      break;
    }
    case Model::DistMult: {
      const auto t = p.translation_row(r);
      for (int i = 0; i < p.dim; ++i) q[i] = e_h[i] * t[i];
      break;
    }
    case Model::RotatE:
      rotate(p.angles_row(r), e_h, q);
      break;
    case Model::RotE: {
      rotate(p.angles_row(r), e_h, q);
      const auto s = p.second_row(r);
      for (int i = 0; i < p.dim; ++i) q[i] += s[i];
      break;
    }
    case Model::RotL: {
      std::vector<double> rotated(p.dim);
      rotate(p.angles_row(r), e_h, rotated);
      flexible_add(rotated, p.second_row(r), p.rel_flex[r], q);
      break;
    }
  }
}

// f_ha(h, r, t) = -h(c_r * ||Phi(e_h, r) - e_t||^2).
inline double score_triple(const ModelSpec& model, const ActivationSpec& act,
                           const ParameterSet& p, std::int32_t h,
                           std::int32_t r, std::int32_t t) {
  std::vector<double> q(p.dim);
  transform(model, p, h, r, q);
  const double d2 = squared_distance(q, p.entity_row(t));
  return -activate(act, p.rel_scale[r] * d2);
}

inline void entity_sq_norms(const ParameterSet& p, std::vector<double>& out) {
  out.resize(p.n_entities);
  for (std::int32_t i = 0; i < p.n_entities; ++i) {
    const auto e = p.entity_row(i);
    double s = 0.0;
    for (int j = 0; j < p.dim; ++j) s += e[j] * e[j];
    out[i] = s;
  }
}

// Scores (h, r, ?) against a contiguous block [begin, end) of entities using
// the expansion ||q||^2 + ||e_i||^2 - 2<q, e_i>; clamped at zero since the
// expansion can go slightly negative when q ~ e_i.
inline void score_block(const ActivationSpec& act, const ParameterSet& p,
                        std::span<const double> q, double q_sq, double c_r,
                        std::span<const double> e_sq, std::int32_t begin,
                        std::int32_t end, double* out) {
  const int d = p.dim;
  for (std::int32_t i = begin; i < end; ++i) {
    const double* e = p.entity.data() + static_cast<std::size_t>(i) * d;
    double dot = 0.0;
    for (int j = 0; j < d; ++j) dot += q[j] * e[j];
    const double d2 = std::max(q_sq + e_sq[i] - 2.0 * dot, 0.0);
    out[i] = -activate(act, c_r * d2);
  }
}

// Full score row f_ha(h, r, E): one query-vector computation plus the batched
// distance kernel over the entity matrix.
inline void score_all(const ModelSpec& model, const ActivationSpec& act,
                      const ParameterSet& p, std::int32_t h, std::int32_t r,
                      std::span<const double> e_sq, std::span<double> out) {
  std::vector<double> q(p.dim);
  transform(model, p, h, r, q);
  double q_sq = 0.0;
  for (int j = 0; j < p.dim; ++j) q_sq += q[j] * q[j];
  score_block(act, p, q, q_sq, p.rel_scale[r], e_sq, 0, p.n_entities,
              out.data());
}

inline std::vector<double> score_all(const ModelSpec& model,
                                     const ActivationSpec& act,
                                     const ParameterSet& p, std::int32_t h,
                                     std::int32_t r) {
  std::vector<double> e_sq;
  entity_sq_norms(p, e_sq);
  std::vector<double> out(p.n_entities);
  score_all(model, act, p, h, r, e_sq, out);
  return out;
}

}  // namespace hale
