#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "hale/kgdata.hpp"
#include "hale/loss.hpp"
#include "hale/mathkernels.hpp"
#include "hale/parallel.hpp"
#include "hale/scoring.hpp"

namespace hale {

// Everything the loss/gradient kernels need to know about the run. Ablations
// are resolved before this is built: activation is already Identity when the
// activation mechanism is off, and rel_ratio=false freezes c_r at its value
// with zero gradient.
struct Objective {
  ModelSpec model;
  ActivationSpec activation;
  LossSpec loss;
  bool rel_ratio = true;
};

// One optimizer step's worth of work. `positives` and `sampled` index into
// `triples`; negatives are entity ids, `neg_count` per positive, row-major.
struct Batch {
  const TripleSet* triples = nullptr;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> sampled;
  std::vector<std::int32_t> negatives;
  int neg_count = 0;
};

// Inputs the loss treats as constants even though they derive from the
// parameters (self-adversarial weights). Captured at the base point by
// compute_gradients; finite-difference checks must evaluate the loss with
// the same frozen values or they would differentiate through the weights.
struct LossContext {
  std::vector<double> adv_weights;  // positives x neg_count, row-major
  bool has_adv = false;
};

// Dense gradient mirror of ParameterSet with touched-row bookkeeping, so the
// trainer only clears and applies what the batch actually referenced.
struct GradBuffer {
  int dim = 0;
  std::int32_t n_entities = 0, n_relations = 0;
  std::vector<double> entity, rel_translation, rel_second, rel_angles,
      rel_scale, rel_flex;
  std::vector<std::int32_t> touched_entities, touched_relations;
  std::vector<std::uint8_t> entity_mark, relation_mark;
  bool all_entities = false;
  std::size_t flex_saturations = 0;  // clamped flexible-add denominators seen

  void init(const ParameterSet& p) {
    dim = p.dim;
    n_entities = p.n_entities;
    n_relations = p.n_relations;
    entity.assign(p.entity.size(), 0.0);
    rel_translation.assign(p.rel_translation.size(), 0.0);
    rel_second.assign(p.rel_second.size(), 0.0);
    rel_angles.assign(p.rel_angles.size(), 0.0);
    rel_scale.assign(p.rel_scale.size(), 0.0);
    rel_flex.assign(p.rel_flex.size(), 0.0);
    entity_mark.assign(p.n_entities, 0);
    relation_mark.assign(p.n_relations, 0);
    touched_entities.clear();
    touched_relations.clear();
    all_entities = false;
  }

  double* entity_grad(std::int32_t i) {
    if (!entity_mark[i]) {
      entity_mark[i] = 1;
      touched_entities.push_back(i);
    }
    return entity.data() + static_cast<std::size_t>(i) * dim;
  }

  // Row pointer without touch bookkeeping; valid once all_entities is set.
  double* entity_grad_dense(std::int32_t i) {
    return entity.data() + static_cast<std::size_t>(i) * dim;
  }

  void touch_relation(std::int32_t r) {
    if (!relation_mark[r]) {
      relation_mark[r] = 1;
      touched_relations.push_back(r);
    }
  }

  void mark_all_entities() { all_entities = true; }

  // Zeroes exactly what was written, then resets the bookkeeping.
  void clear(ThreadPool* pool = nullptr) {
    if (all_entities) {
      if (pool) {
        pool->for_blocks(entity.size(), [&](int, std::size_t b, std::size_t e) {
          std::fill(entity.begin() + static_cast<long>(b),
                    entity.begin() + static_cast<long>(e), 0.0);
        });
      } else {
        std::fill(entity.begin(), entity.end(), 0.0);
      }
      std::fill(entity_mark.begin(), entity_mark.end(), 0);
    } else {
      for (std::int32_t i : touched_entities) {
        std::fill_n(entity.data() + static_cast<std::size_t>(i) * dim, dim, 0.0);
        entity_mark[i] = 0;
      }
    }
    for (std::int32_t r : touched_relations) {
      std::fill_n(rel_translation.data() + static_cast<std::size_t>(r) * dim,
                  dim, 0.0);
      std::fill_n(rel_second.data() + static_cast<std::size_t>(r) * dim, dim,
                  0.0);
      std::fill_n(rel_angles.data() + static_cast<std::size_t>(r) * (dim / 2),
                  dim / 2, 0.0);
      rel_scale[r] = 0.0;
      rel_flex[r] = 0.0;
      relation_mark[r] = 0;
    }
    touched_entities.clear();
    touched_relations.clear();
    all_entities = false;
    flex_saturations = 0;
  }
};

namespace detail {

// Forward intermediates of one query vector, kept for backprop.
struct QueryCtx {
  std::vector<double> q;
  std::vector<double> rotated;  // u, before the post-rotation combine
  double flex_den = 1.0;
  bool flex_clamped = false;
  double q_sq = 0.0;
};

inline void forward_query(const ModelSpec& model, const ParameterSet& p,
                          std::int32_t h, std::int32_t r, QueryCtx& ctx) {
  const int d = p.dim;
  ctx.q.resize(d);
  const auto e_h = p.entity_row(h);
  switch (model.kind) {
    case Model::TransE: {
      const auto t = p.translation_row(r);
      for (int i = 0; i < d; ++i) ctx.q[i] = e_h[i] + t[i];
      break;
    }
    case Model::DistMult: {
      const auto t = p.translation_row(r);
      for (int i = 0; i < d; ++i) ctx.q[i] = e_h[i] * t[i];
      break;
    }
    case Model::RotatE: {
      ctx.rotated.resize(d);
      rotate(p.angles_row(r), e_h, ctx.rotated);
      ctx.q = ctx.rotated;
      break;
    }
    case Model::RotE: {
      ctx.rotated.resize(d);
      rotate(p.angles_row(r), e_h, ctx.rotated);
      const auto s = p.second_row(r);
      for (int i = 0; i < d; ++i) ctx.q[i] = ctx.rotated[i] + s[i];
      break;
    }
    case Model::RotL: {
      ctx.rotated.resize(d);
      rotate(p.angles_row(r), e_h, ctx.rotated);
      const auto y = p.second_row(r);
      double dot = 0.0;
      for (int i = 0; i < d; ++i) dot += ctx.rotated[i] * y[i];
      double den = 1.0 - dot;
      ctx.flex_clamped = std::abs(den) < kFlexDenomFloor;
      if (ctx.flex_clamped) den = den < 0.0 ? -kFlexDenomFloor : kFlexDenomFloor;
      ctx.flex_den = den;
      const double scale = p.rel_flex[r] / den;
      for (int i = 0; i < d; ++i) ctx.q[i] = scale * (ctx.rotated[i] + y[i]);
      break;
    }
  }
  ctx.q_sq = 0.0;
  for (int i = 0; i < d; ++i) ctx.q_sq += ctx.q[i] * ctx.q[i];
}

// Accumulates dL/dq into the head-entity row and the relation blocks.
inline void backprop_query(const ModelSpec& model, const ParameterSet& p,
                           std::int32_t h, std::int32_t r,
                           const QueryCtx& ctx, std::span<const double> gq,
                           GradBuffer& g) {
  const int d = p.dim;
  g.touch_relation(r);
  double* ge = g.all_entities ? g.entity_grad_dense(h) : g.entity_grad(h);
  double* gt = g.rel_translation.data() + static_cast<std::size_t>(r) * d;
  double* gs = g.rel_second.data() + static_cast<std::size_t>(r) * d;
  double* ga = g.rel_angles.data() + static_cast<std::size_t>(r) * (d / 2);
  const auto e_h = p.entity_row(h);

  // For rotation models: dL/du (u = rotated head), then through the rotation.
  auto backprop_rotation = [&](std::span<const double> gu) {
    const auto angles = p.angles_row(r);
    for (int i = 0; i < d / 2; ++i) {
      const double c = std::cos(angles[i]);
      const double s = std::sin(angles[i]);
      const double gx = gu[2 * i];
      const double gy = gu[2 * i + 1];
      // e gets R^T gu; the angle gradient is <gu, dR/dtheta e> = gy*u_x - gx*u_y.
      ge[2 * i] += c * gx + s * gy;
      ge[2 * i + 1] += -s * gx + c * gy;
      ga[i] += gy * ctx.rotated[2 * i] - gx * ctx.rotated[2 * i + 1];
    }
  };

  switch (model.kind) {
    case Model::TransE:
      for (int i = 0; i < d; ++i) {
        ge[i] += gq[i];
        gt[i] += gq[i];
      }
      break;
    case Model::DistMult: {
      const auto t = p.translation_row(r);
      for (int i = 0; i < d; ++i) {
        ge[i] += gq[i] * t[i];
        gt[i] += gq[i] * e_h[i];
      }
      break;
    }
    case Model::RotatE:
      backprop_rotation(gq);
      break;
    case Model::RotE:
      backprop_rotation(gq);
      for (int i = 0; i < d; ++i) gs[i] += gq[i];
      break;
    case Model::RotL: {
      const auto y = p.second_row(r);
      const double alpha = p.rel_flex[r];
      const double den = ctx.flex_den;
      double gq_dot_sum = 0.0;  // <gq, u + y>
      for (int i = 0; i < d; ++i)
        gq_dot_sum += gq[i] * (ctx.rotated[i] + y[i]);
      g.rel_flex[r] += gq_dot_sum / den;
      const double a_den = alpha / den;
      // Through the denominator only when it was not clamped to its floor.
      const double curv = ctx.flex_clamped ? 0.0 : alpha * gq_dot_sum / (den * den);
      std::vector<double> gu(d);
      for (int i = 0; i < d; ++i) {
        gu[i] = a_den * gq[i] + curv * y[i];
        gs[i] += a_den * gq[i] + curv * ctx.rotated[i];
      }
      backprop_rotation(gu);
      break;
    }
  }
}

// Gradient of f = -h(c_r * ||q - e_t||^2) given upstream df = dL/df.
// Adds to grad_q (caller-held) and the tail-entity row; returns the c_r term.
inline double backprop_triple_score(const Objective& obj,
                                    const ParameterSet& p,
                                    std::span<const double> q, std::int32_t t,
                                    double c_r, double df, double* grad_q,
                                    GradBuffer& g) {
  const int d = p.dim;
  const auto e_t = p.entity_row(t);
  double d2 = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = q[i] - e_t[i];
    d2 += diff * diff;
  }
  const double hp = activate_grad(obj.activation, c_r * d2);
  const double coeff = df * (-hp) * c_r * 2.0;
  double* ge = g.all_entities ? g.entity_grad_dense(t) : g.entity_grad(t);
  for (int i = 0; i < d; ++i) {
    const double diff = q[i] - e_t[i];
    grad_q[i] += coeff * diff;
    ge[i] -= coeff * diff;
  }
  return df * (-hp) * d2;  // dL/d c_r
}

// One all-entity score row inside a tiled batch: the query comes from
// triple `triple` of the training set; its dL/df is
// softmax_coeff * softmax_i plus delta_value at entity delta_index.
// HaLE uniformity rows use (1/m, none); AllNeg rows use (1/n, -1/n at tail).
struct RowTask {
  std::size_t triple = 0;
  double softmax_coeff = 0.0;
  std::int32_t delta_index = -1;
  double delta_value = 0.0;
};

struct RowResult {
  double lse = 0.0;
  double f_at_delta = 0.0;  // score at delta_index (AllNeg's target term)
};

// Reusable buffers for process_score_rows; sized on first use.
struct RowScratch {
  std::vector<double> d2, f, expb;   // tile x n_entities, entity-major
  std::vector<QueryCtx> ctx;
  std::vector<double> c_r;
  std::vector<double> row_max, row_sum, cq, gcr;
  std::vector<double> grad_q;        // tile x dim
  std::vector<std::vector<double>> partials;  // per block
};

// Processes a tile of score rows jointly: one pass over the entity matrix
// computes all pairwise squared distances (||q||^2 + ||e||^2 - 2<q,e>),
// activations and row LSEs; a second pass accumulates every gradient. All
// loops are parallel over contiguous entity blocks and all reductions merge
// per-block partials in block order, so results are reproducible for a fixed
// worker count. Entity-row gradients are written exclusively by the block
// that owns the row.
inline void process_score_rows(const Objective& obj, const ParameterSet& p,
                               const TripleSet& T,
                               std::span<const RowTask> rows,
                               std::span<const double> e_sq, GradBuffer& g,
                               ThreadPool* pool, RowScratch& s,
                               std::vector<RowResult>& out) {
  const int d = p.dim;
  const std::size_t n = p.n_entities;
  const std::size_t m = rows.size();
  const int nblocks = pool ? pool->size() : 1;
  out.resize(m);
  if (m == 0) return;

  s.d2.resize(m * n);
  s.f.resize(m * n);
  s.expb.resize(m * n);
  s.ctx.resize(m);
  s.c_r.resize(m);
  s.row_max.assign(m, -std::numeric_limits<double>::infinity());
  s.row_sum.assign(m, 0.0);
  s.cq.assign(m, 0.0);
  s.gcr.assign(m, 0.0);
  s.grad_q.assign(m * d, 0.0);
  // per-block partials: m maxima, m sums, m cq, m gcr, m*d ce
  const std::size_t part_size = 4 * m + m * d;
  s.partials.assign(nblocks, std::vector<double>(part_size, 0.0));

  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t t = rows[j].triple;
    forward_query(obj.model, p, T.heads[t], T.relations[t], s.ctx[j]);
    if (s.ctx[j].flex_clamped) ++g.flex_saturations;
    s.c_r[j] = p.rel_scale[T.relations[t]];
  }

  const bool hanon = obj.activation.kind == Activation::Hanon;
  const double beta = obj.activation.beta;
  const double gamma = obj.activation.gamma;
  const double hanon_cap = std::nextafter(gamma, 0.0);
  // Capped activations bound f within [-gamma, 0], so exp(f) needs no
  // max-shift and the softmax pass fuses into the distance pass.
  const bool fused = (hanon || obj.activation.kind == Activation::Halin) &&
                     gamma <= 60.0;

  auto fill_distances = [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const double* ev = p.entity.data() + i * d;
      double* d2_i = s.d2.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double* q = s.ctx[j].q.data();
        double dot = 0.0;
        for (int k = 0; k < d; ++k) dot += q[k] * ev[k];
        const double d2 = s.ctx[j].q_sq + e_sq[i] - 2.0 * dot;
        d2_i[j] = d2 < 0.0 ? 0.0 : d2;
      }
    }
  };

  auto fill_scores = [&](std::size_t b, std::size_t e) {
    double* f_blk = s.f.data() + b * m;
    const std::size_t cnt = (e - b) * m;
    if (hanon) {
      // f = -min(1/(1/gamma + exp(-beta (c_r d2 - 0.5))), cap), vectorized
      for (std::size_t i = b; i < e; ++i) {
        const double* d2_i = s.d2.data() + i * m;
        double* f_i = s.f.data() + i * m;
        for (std::size_t j = 0; j < m; ++j)
          f_i[j] = -beta * (s.c_r[j] * d2_i[j] - 0.5);
      }
      exp_inplace(f_blk, cnt);
      const double inv_gamma = 1.0 / gamma;
      for (std::size_t u = 0; u < cnt; ++u) {
        const double h = 1.0 / (inv_gamma + f_blk[u]);
        f_blk[u] = -(h < hanon_cap ? h : hanon_cap);
      }
    } else {
      for (std::size_t i = b; i < e; ++i) {
        const double* d2_i = s.d2.data() + i * m;
        double* f_i = s.f.data() + i * m;
        for (std::size_t j = 0; j < m; ++j)
          f_i[j] = -activate(obj.activation, s.c_r[j] * d2_i[j]);
      }
    }
  };

  if (fused) {
    // Single sweep: distances, scores, exp(f), block row-sums.
    auto pass_fused = [&](int blk, std::size_t b, std::size_t e) {
      fill_distances(b, e);
      fill_scores(b, e);
      double* sums = s.partials[blk].data() + m;
      std::fill(sums, sums + m, 0.0);
      double* x_blk = s.expb.data() + b * m;
      const std::size_t cnt = (e - b) * m;
      std::copy(s.f.data() + b * m, s.f.data() + e * m, x_blk);
      exp_inplace(x_blk, cnt);
      for (std::size_t i = b; i < e; ++i) {
        const double* x_i = s.expb.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) sums[j] += x_i[j];
      }
    };
    if (pool) pool->for_blocks(n, pass_fused);
    else pass_fused(0, 0, n);
    std::fill(s.row_max.begin(), s.row_max.end(), 0.0);
  } else {
    // Pass A: distances, activations, per-block row maxima.
    auto pass_a = [&](int blk, std::size_t b, std::size_t e) {
      double* maxes = s.partials[blk].data();
      for (std::size_t j = 0; j < m; ++j)
        maxes[j] = -std::numeric_limits<double>::infinity();
      fill_distances(b, e);
      fill_scores(b, e);
      for (std::size_t i = b; i < e; ++i) {
        const double* f_i = s.f.data() + i * m;
        for (std::size_t j = 0; j < m; ++j)
          maxes[j] = std::max(maxes[j], f_i[j]);
      }
    };
    if (pool) pool->for_blocks(n, pass_a);
    else pass_a(0, 0, n);
    for (int blk = 0; blk < nblocks; ++blk) {
      for (std::size_t j = 0; j < m; ++j)
        s.row_max[j] = std::max(s.row_max[j], s.partials[blk][j]);
    }

    // Pass A2: exp(f - row_max) and per-block row sums.
    auto pass_a2 = [&](int blk, std::size_t b, std::size_t e) {
      double* sums = s.partials[blk].data() + m;
      std::fill(sums, sums + m, 0.0);
      double* x_blk = s.expb.data() + b * m;
      const std::size_t cnt = (e - b) * m;
      for (std::size_t i = b; i < e; ++i) {
        const double* f_i = s.f.data() + i * m;
        double* x_i = s.expb.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) x_i[j] = f_i[j] - s.row_max[j];
      }
      exp_inplace(x_blk, cnt);
      for (std::size_t i = b; i < e; ++i) {
        const double* x_i = s.expb.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) sums[j] += x_i[j];
      }
    };
    if (pool) pool->for_blocks(n, pass_a2);
    else pass_a2(0, 0, n);
  }
  for (int blk = 0; blk < nblocks; ++blk) {
    for (std::size_t j = 0; j < m; ++j)
      s.row_sum[j] += s.partials[blk][m + j];
  }
  for (std::size_t j = 0; j < m; ++j) {
    out[j].lse = s.row_max[j] + std::log(s.row_sum[j]);
    if (rows[j].delta_index >= 0)
      out[j].f_at_delta =
          s.f[static_cast<std::size_t>(rows[j].delta_index) * m + j];
  }

  // Pass B: gradients. For entity i with upstream df_{j,i}:
  //   common_{j,i} = df * (-h') * c_r     (dL/d d2)
  //   ge_i += 2 (sum_j common) e_i - 2 sum_j common q_j
  //   ce_j += common e_i ; cq_j += common ; gcr_j += df * (-h') * d2
  auto pass_b = [&](int blk, std::size_t b, std::size_t e) {
    double* part = s.partials[blk].data();
    double* cq = part;              // m
    double* gcr = part + m;         // m
    double* ce = part + 2 * m;      // m x d
    std::fill(part, part + 2 * m + m * d, 0.0);
    std::vector<double> common(m), w(d);
    for (std::size_t i = b; i < e; ++i) {
      const double* d2_i = s.d2.data() + i * m;
      const double* f_i = s.f.data() + i * m;
      const double* x_i = s.expb.data() + i * m;
      double s_common = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        double df = rows[j].softmax_coeff * x_i[j] / s.row_sum[j];
        if (static_cast<std::int32_t>(i) == rows[j].delta_index)
          df += rows[j].delta_value;
        const double x = s.c_r[j] * d2_i[j];
        const double hp = activate_grad_from_value(obj.activation, x, -f_i[j]);
        const double c = df * (-hp) * s.c_r[j];
        common[j] = c;
        s_common += c;
        cq[j] += c;
        gcr[j] += df * (-hp) * d2_i[j];
      }
      const double* ev = p.entity.data() + i * d;
      double* ge = g.entity.data() + i * d;
      std::fill(w.begin(), w.end(), 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const double c = common[j];
        if (c == 0.0) continue;
        const double* q = s.ctx[j].q.data();
        double* ce_j = ce + j * d;
        for (int k = 0; k < d; ++k) {
          w[k] += c * q[k];
          ce_j[k] += c * ev[k];
        }
      }
      for (int k = 0; k < d; ++k)
        ge[k] += 2.0 * (s_common * ev[k] - w[k]);
    }
  };
  if (pool) pool->for_blocks(n, pass_b);
  else pass_b(0, 0, n);

  // Merge per-block partials in block order, then close each row's chain.
  for (int blk = 0; blk < nblocks; ++blk) {
    const double* part = s.partials[blk].data();
    for (std::size_t j = 0; j < m; ++j) {
      s.cq[j] += part[j];
      s.gcr[j] += part[m + j];
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double* ce_j = part + 2 * m + j * d;
      double* gq = s.grad_q.data() + j * d;
      for (int k = 0; k < d; ++k) gq[k] -= 2.0 * ce_j[k];
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    double* gq = s.grad_q.data() + j * d;
    for (int k = 0; k < d; ++k) gq[k] += 2.0 * s.cq[j] * s.ctx[j].q[k];
    const std::size_t t = rows[j].triple;
    backprop_query(obj.model, p, T.heads[t], T.relations[t], s.ctx[j],
                   std::span<const double>(gq, static_cast<std::size_t>(d)),
                   g);
    if (obj.rel_ratio) g.rel_scale[T.relations[t]] += s.gcr[j];
  }
}

inline void compute_entity_sq_norms(const ParameterSet& p,
                                    std::vector<double>& e_sq,
                                    ThreadPool* pool) {
  e_sq.resize(p.n_entities);
  auto work = [&](int, std::size_t b, std::size_t e) {
    const int d = p.dim;
    for (std::size_t i = b; i < e; ++i) {
      const double* ev = p.entity.data() + i * d;
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += ev[j] * ev[j];
      e_sq[i] = s;
    }
  };
  if (pool) {
    pool->for_blocks(p.n_entities, work);
  } else {
    work(0, 0, p.n_entities);
  }
}

}  // namespace detail

// Pure forward evaluation of the batch objective. With `frozen` supplied, the
// self-adversarial weights are taken from it instead of recomputed, matching
// the detached-weight semantics the gradients implement.
inline double batch_loss(const Objective& obj, const ParameterSet& p,
                         const Batch& batch,
                         const LossContext* frozen = nullptr) {
  const auto& T = *batch.triples;

  auto pos_score = [&](std::size_t idx) {
    return score_triple(obj.model, obj.activation, p, T.heads[idx],
                        T.relations[idx], T.tails[idx]);
  };

  switch (obj.loss.kind) {
    case LossKind::HaLE: {
      std::vector<double> pos(batch.positives.size());
      for (std::size_t i = 0; i < batch.positives.size(); ++i)
        pos[i] = pos_score(batch.positives[i]);
      std::vector<std::vector<double>> rows;
      rows.reserve(batch.sampled.size());
      std::vector<double> e_sq;
      if (!batch.sampled.empty()) detail::compute_entity_sq_norms(p, e_sq, nullptr);
      for (std::size_t s : batch.sampled) {
        std::vector<double> row(p.n_entities);
        score_all(obj.model, obj.activation, p, T.heads[s], T.relations[s],
                  e_sq, row);
        rows.push_back(std::move(row));
      }
      return hale_loss(pos, rows, obj.loss);
    }
    case LossKind::AllNeg: {
      std::vector<double> e_sq;
      detail::compute_entity_sq_norms(p, e_sq, nullptr);
      std::vector<double> row(p.n_entities);
      double loss = 0.0;
      for (std::size_t idx : batch.positives) {
        score_all(obj.model, obj.activation, p, T.heads[idx],
                  T.relations[idx], e_sq, row);
        loss += allneg_loss(static_cast<std::size_t>(T.tails[idx]), row);
      }
      return loss / static_cast<double>(batch.positives.size());
    }
    case LossKind::NonNeg: {
      std::vector<double> pos(batch.positives.size());
      for (std::size_t i = 0; i < batch.positives.size(); ++i)
        pos[i] = pos_score(batch.positives[i]);
      return nonneg_loss(pos, p.entity, p.n_entities, p.dim, obj.loss);
    }
    case LossKind::SamNeg:
    case LossKind::AdvNeg: {
      const int k = batch.neg_count;
      std::vector<double> q(p.dim);
      std::vector<double> negs(k);
      double loss = 0.0;
      for (std::size_t i = 0; i < batch.positives.size(); ++i) {
        const std::size_t idx = batch.positives[i];
        transform(obj.model, p, T.heads[idx], T.relations[idx], q);
        const double c_r = p.rel_scale[T.relations[idx]];
        const double fp =
            -activate(obj.activation,
                      c_r * squared_distance(q, p.entity_row(T.tails[idx])));
        for (int j = 0; j < k; ++j) {
          const std::int32_t neg = batch.negatives[i * k + j];
          negs[j] = -activate(obj.activation,
                              c_r * squared_distance(q, p.entity_row(neg)));
        }
        if (obj.loss.kind == LossKind::SamNeg) {
          loss += samneg_loss(fp, negs, obj.loss.margin);
        } else {
          std::vector<double> w;
          const std::vector<double>* wp = nullptr;
          if (frozen && frozen->has_adv) {
            w.assign(frozen->adv_weights.begin() + static_cast<long>(i) * k,
                     frozen->adv_weights.begin() + static_cast<long>(i + 1) * k);
            wp = &w;
          }
          loss += advneg_loss(fp, negs, obj.loss.margin,
                              obj.loss.adv_temperature, wp);
        }
      }
      return loss / static_cast<double>(batch.positives.size());
    }
  }
  return 0.0;
}

// Rows processed jointly per entity pass; bounds the tile buffers at
// 3 * kRowTile * n_entities doubles.
inline constexpr std::size_t kRowTile = 32;

// Forward + analytic backward for the configured loss. Returns the loss and
// accumulates gradients for every touched parameter into `g` (call g.clear()
// between batches). With rel_ratio off, c_r gradients are forced to zero.
// `scratch` lets the trainer reuse the tile buffers across batches.
inline double compute_gradients(const Objective& obj, const ParameterSet& p,
                                const Batch& batch, GradBuffer& g,
                                ThreadPool* pool = nullptr,
                                LossContext* aux_out = nullptr,
                                detail::RowScratch* scratch = nullptr) {
  detail::RowScratch local_scratch;
  if (!scratch) scratch = &local_scratch;
  const auto& T = *batch.triples;
  const int d = p.dim;
  const std::size_t n_pos = batch.positives.size();
  if (n_pos == 0) throw Error("compute_gradients: empty batch");
  double loss = 0.0;

  detail::QueryCtx ctx;
  std::vector<double> grad_q(d);

  // Positive-side alignment used by HaLE and NonNeg: per positive, upstream
  // df = dL/df with L containing w * mean(f^2) or w * mean(-f).
  auto alignment_pass = [&](double weight, bool square) {
    for (std::size_t idx : batch.positives) {
      const std::int32_t r = T.relations[idx];
      detail::forward_query(obj.model, p, T.heads[idx], r, ctx);
      if (ctx.flex_clamped) ++g.flex_saturations;
      const double c_r = p.rel_scale[r];
      const double d2 = squared_distance(ctx.q, p.entity_row(T.tails[idx]));
      const double f = -activate(obj.activation, c_r * d2);
      loss += weight * (square ? f * f : -f);
      const double df =
          weight * (square ? 2.0 * f : -1.0);  // d(term)/df
      std::fill(grad_q.begin(), grad_q.end(), 0.0);
      const double gcr = detail::backprop_triple_score(
          obj, p, ctx.q, T.tails[idx], c_r, df, grad_q.data(), g);
      detail::backprop_query(obj.model, p, T.heads[idx], r, ctx, grad_q, g);
      if (obj.rel_ratio) g.rel_scale[r] += gcr;
    }
  };

  switch (obj.loss.kind) {
    case LossKind::HaLE: {
      if (!batch.sampled.empty()) g.mark_all_entities();
      alignment_pass(obj.loss.lambda / static_cast<double>(n_pos),
                     obj.loss.pos_square);
      if (!batch.sampled.empty()) {
        std::vector<double> e_sq;
        detail::compute_entity_sq_norms(p, e_sq, pool);
        const double inv_rows = 1.0 / static_cast<double>(batch.sampled.size());
        std::vector<detail::RowTask> tasks;
        std::vector<detail::RowResult> results;
        for (std::size_t lo = 0; lo < batch.sampled.size(); lo += kRowTile) {
          const std::size_t hi =
              std::min(batch.sampled.size(), lo + kRowTile);
          tasks.clear();
          for (std::size_t j = lo; j < hi; ++j)
            tasks.push_back({batch.sampled[j], inv_rows});
          detail::process_score_rows(obj, p, T, tasks, e_sq, g, pool,
                                     *scratch, results);
          for (const auto& r : results) loss += inv_rows * r.lse;
        }
      }
      break;
    }

    case LossKind::AllNeg: {
      g.mark_all_entities();
      std::vector<double> e_sq;
      detail::compute_entity_sq_norms(p, e_sq, pool);
      const double inv_n = 1.0 / static_cast<double>(n_pos);
      std::vector<detail::RowTask> tasks;
      std::vector<detail::RowResult> results;
      for (std::size_t lo = 0; lo < n_pos; lo += kRowTile) {
        const std::size_t hi = std::min(n_pos, lo + kRowTile);
        tasks.clear();
        for (std::size_t j = lo; j < hi; ++j) {
          const std::size_t idx = batch.positives[j];
          tasks.push_back({idx, inv_n, T.tails[idx], -inv_n});
        }
        detail::process_score_rows(obj, p, T, tasks, e_sq, g, pool, *scratch,
                                   results);
        for (const auto& r : results)
          loss += inv_n * (-r.f_at_delta + r.lse);
      }
      break;
    }

    case LossKind::NonNeg: {
      g.mark_all_entities();
      alignment_pass(1.0 / static_cast<double>(n_pos), true);
      if (obj.loss.reg_weight > 0.0) {
        const std::size_t n = p.n_entities;
        const double rho = obj.loss.reg_radius;
        const int nblocks = pool ? pool->size() : 1;
        // centroid
        std::vector<std::vector<double>> csum(nblocks,
                                              std::vector<double>(d, 0.0));
        auto centroid_work = [&](int blk, std::size_t b, std::size_t e) {
          auto& acc = csum[blk];
          for (std::size_t i = b; i < e; ++i) {
            const double* ev = p.entity.data() + i * d;
            for (int j = 0; j < d; ++j) acc[j] += ev[j];
          }
        };
        if (pool) pool->for_blocks(n, centroid_work);
        else centroid_work(0, 0, n);
        std::vector<double> centroid(d, 0.0);
        for (int b = 0; b < nblocks; ++b)
          for (int j = 0; j < d; ++j) centroid[j] += csum[b][j];
        for (int j = 0; j < d; ++j) centroid[j] /= static_cast<double>(n);

        // residuals r_i, penalty, and v = mean_i (r_i - rho)(e_i - centroid)
        std::vector<double> resid(n);
        std::vector<std::vector<double>> vsum(
            nblocks, std::vector<double>(static_cast<std::size_t>(d) + 1, 0.0));
        auto resid_work = [&](int blk, std::size_t b, std::size_t e) {
          auto& acc = vsum[blk];
          for (std::size_t i = b; i < e; ++i) {
            const double* ev = p.entity.data() + i * d;
            double r2 = 0.0;
            for (int j = 0; j < d; ++j) {
              const double diff = ev[j] - centroid[j];
              r2 += diff * diff;
            }
            resid[i] = r2;
            const double excess = r2 - rho;
            acc[d] += excess * excess;
            for (int j = 0; j < d; ++j)
              acc[j] += excess * (ev[j] - centroid[j]);
          }
        };
        if (pool) pool->for_blocks(n, resid_work);
        else resid_work(0, 0, n);
        double gsum = 0.0;
        std::vector<double> v(d, 0.0);
        for (int b = 0; b < nblocks; ++b) {
          gsum += vsum[b][d];
          for (int j = 0; j < d; ++j) v[j] += vsum[b][j];
        }
        loss += obj.loss.reg_weight * gsum / static_cast<double>(n);
        for (int j = 0; j < d; ++j) v[j] /= static_cast<double>(n);

        const double scale = obj.loss.reg_weight * 4.0 / static_cast<double>(n);
        auto grad_work = [&](int, std::size_t b, std::size_t e) {
          for (std::size_t i = b; i < e; ++i) {
            const double* ev = p.entity.data() + i * d;
            double* ge = g.entity.data() + i * d;
            const double excess = resid[i] - rho;
            for (int j = 0; j < d; ++j) {
              ge[j] += scale * (excess * (ev[j] - centroid[j]) - v[j]);
            }
          }
        };
        if (pool) pool->for_blocks(n, grad_work);
        else grad_work(0, 0, n);
      }
      break;
    }

    case LossKind::SamNeg:
    case LossKind::AdvNeg: {
      const int k = batch.neg_count;
      if (k < 1 || batch.negatives.size() != n_pos * static_cast<std::size_t>(k))
        throw Error("compute_gradients: bad negatives block");
      const bool adv = obj.loss.kind == LossKind::AdvNeg;
      if (aux_out) {
        aux_out->has_adv = adv;
        aux_out->adv_weights.assign(adv ? n_pos * k : 0, 0.0);
      }
      std::vector<double> negs(k);
      std::vector<double> w;
      const double inv_n = 1.0 / static_cast<double>(n_pos);
      for (std::size_t i = 0; i < n_pos; ++i) {
        const std::size_t idx = batch.positives[i];
        const std::int32_t r = T.relations[idx];
        detail::forward_query(obj.model, p, T.heads[idx], r, ctx);
        if (ctx.flex_clamped) ++g.flex_saturations;
        const double c_r = p.rel_scale[r];
        const double fp = -activate(
            obj.activation,
            c_r * squared_distance(ctx.q, p.entity_row(T.tails[idx])));
        for (int j = 0; j < k; ++j) {
          const std::int32_t neg = batch.negatives[i * k + j];
          negs[j] = -activate(obj.activation,
                              c_r * squared_distance(ctx.q, p.entity_row(neg)));
        }
        if (adv) {
          adv_weights(negs, obj.loss.adv_temperature, w);
          if (aux_out)
            std::copy(w.begin(), w.end(),
                      aux_out->adv_weights.begin() + static_cast<long>(i) * k);
          loss += inv_n * advneg_loss(fp, negs, obj.loss.margin,
                                      obj.loss.adv_temperature, &w);
        } else {
          loss += inv_n * samneg_loss(fp, negs, obj.loss.margin);
        }

        std::fill(grad_q.begin(), grad_q.end(), 0.0);
        // d/dfp of -log s(fp + m) is -(1 - s(fp + m)) = s(fp + m) - 1.
        const double df_pos = inv_n * (logistic(fp + obj.loss.margin) - 1.0);
        double gcr = detail::backprop_triple_score(
            obj, p, ctx.q, T.tails[idx], c_r, df_pos, grad_q.data(), g);
        for (int j = 0; j < k; ++j) {
          const double wj = adv ? w[j] : 1.0 / static_cast<double>(k);
          // d/dn of -log s(-n - m) is s(n + m).
          const double df_neg =
              inv_n * wj * logistic(negs[j] + obj.loss.margin);
          gcr += detail::backprop_triple_score(obj, p, ctx.q,
                                               batch.negatives[i * k + j], c_r,
                                               df_neg, grad_q.data(), g);
        }
        detail::backprop_query(obj.model, p, T.heads[idx], r, ctx, grad_q, g);
        if (obj.rel_ratio) g.rel_scale[r] += gcr;
      }
      break;
    }
  }

  if (!std::isfinite(loss)) throw Error("non-finite loss");
  return loss;
}

}  // namespace hale
