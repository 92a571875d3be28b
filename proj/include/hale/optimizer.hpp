#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hale/gradients.hpp"
#include "hale/scoring.hpp"

namespace hale {

enum class Optimizer { Adam, SGD };

inline const char* to_string(Optimizer o) {
  return o == Optimizer::Adam ? "adam" : "sgd";
}

inline Optimizer optimizer_from_string(const std::string& s) {
  if (s == "adam") return Optimizer::Adam;
  if (s == "sgd") return Optimizer::SGD;
  throw ConfigError("unknown optimizer: " + s);
}

// c_r must stay positive so the activated distance remains monotone.
inline constexpr double kRelScaleFloor = 1e-3;

// Sparse/lazy optimizer state: Adam moments live per parameter, but step
// counters (bias correction) advance per row only when that row is touched.
class OptimizerState {
 public:
  void init(Optimizer kind, const ParameterSet& p) {
    kind_ = kind;
    if (kind_ == Optimizer::Adam) {
      m_entity_.assign(p.entity.size(), 0.0);
      v_entity_.assign(p.entity.size(), 0.0);
      t_entity_.assign(p.n_entities, 0);
      const std::size_t rel_block = p.rel_translation.size() +
                                    p.rel_second.size() + p.rel_angles.size() +
                                    p.rel_scale.size() + p.rel_flex.size();
      m_rel_.assign(rel_block, 0.0);
      v_rel_.assign(rel_block, 0.0);
      t_rel_.assign(p.n_relations, 0);
    }
  }

  // Applies one step for every touched row. With rel_ratio off, c_r is left
  // frozen; after any update c_r is clamped to the positive floor. Entity
  // rows are independent, so they shard across the pool when given one.
  void apply(ParameterSet& p, const GradBuffer& g, double lr, bool rel_ratio,
             ThreadPool* pool = nullptr) {
    if (kind_ == Optimizer::SGD) {
      auto sgd_row = [&](double* param, const double* grad, int n) {
        for (int j = 0; j < n; ++j) param[j] -= lr * grad[j];
      };
      for_each_touched_entity(p, g, pool, [&](std::int32_t i) {
        sgd_row(p.entity.data() + static_cast<std::size_t>(i) * p.dim,
                g.entity.data() + static_cast<std::size_t>(i) * p.dim, p.dim);
      });
      for (std::int32_t r : g.touched_relations) {
        sgd_row(p.rel_translation.data() + static_cast<std::size_t>(r) * p.dim,
                g.rel_translation.data() + static_cast<std::size_t>(r) * p.dim,
                p.dim);
        sgd_row(p.rel_second.data() + static_cast<std::size_t>(r) * p.dim,
                g.rel_second.data() + static_cast<std::size_t>(r) * p.dim,
                p.dim);
        sgd_row(p.rel_angles.data() + static_cast<std::size_t>(r) * (p.dim / 2),
                g.rel_angles.data() + static_cast<std::size_t>(r) * (p.dim / 2),
                p.dim / 2);
        if (rel_ratio) {
          p.rel_scale[r] =
              std::max(p.rel_scale[r] - lr * g.rel_scale[r], kRelScaleFloor);
        }
        p.rel_flex[r] -= lr * g.rel_flex[r];
      }
      return;
    }

    // Adam
    for_each_touched_entity(p, g, pool, [&](std::int32_t i) {
      adam_row(p.entity.data() + static_cast<std::size_t>(i) * p.dim,
               g.entity.data() + static_cast<std::size_t>(i) * p.dim,
               m_entity_.data() + static_cast<std::size_t>(i) * p.dim,
               v_entity_.data() + static_cast<std::size_t>(i) * p.dim, p.dim,
               lr, ++t_entity_[i]);
    });
    const std::size_t d = p.dim;
    const std::size_t half = d / 2;
    const std::size_t n_rel = p.n_relations;
    // relation block layout inside m_rel_/v_rel_:
    // [translation | second | angles | scale | flex]
    const std::size_t off_second = n_rel * d;
    const std::size_t off_angles = off_second + n_rel * d;
    const std::size_t off_scale = off_angles + n_rel * half;
    const std::size_t off_flex = off_scale + n_rel;
    for (std::int32_t r : g.touched_relations) {
      const auto t = ++t_rel_[r];
      adam_row(p.rel_translation.data() + r * d, g.rel_translation.data() + r * d,
               m_rel_.data() + r * d, v_rel_.data() + r * d, p.dim, lr, t);
      adam_row(p.rel_second.data() + r * d, g.rel_second.data() + r * d,
               m_rel_.data() + off_second + r * d,
               v_rel_.data() + off_second + r * d, p.dim, lr, t);
      adam_row(p.rel_angles.data() + r * half, g.rel_angles.data() + r * half,
               m_rel_.data() + off_angles + r * half,
               v_rel_.data() + off_angles + r * half, p.dim / 2, lr, t);
      if (rel_ratio) {
        adam_row(&p.rel_scale[r], &g.rel_scale[r], &m_rel_[off_scale + r],
                 &v_rel_[off_scale + r], 1, lr, t);
        p.rel_scale[r] = std::max(p.rel_scale[r], kRelScaleFloor);
      }
      adam_row(&p.rel_flex[r], &g.rel_flex[r], &m_rel_[off_flex + r],
               &v_rel_[off_flex + r], 1, lr, t);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  static void adam_row(double* param, const double* grad, double* m, double* v,
                       int n, double lr, std::int64_t t) {
    // rows sharing a step count (the dense case) reuse the pow results
    thread_local std::int64_t cached_t = -1;
    thread_local double cached_bc1 = 1.0, cached_bc2 = 1.0;
    if (t != cached_t) {
      cached_t = t;
      cached_bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      cached_bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    }
    const double bc1 = cached_bc1;
    const double bc2 = cached_bc2;
    for (int j = 0; j < n; ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * grad[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * grad[j] * grad[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      param[j] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }

  template <typename Fn>
  static void for_each_touched_entity(const ParameterSet& p,
                                      const GradBuffer& g, ThreadPool* pool,
                                      Fn fn) {
    if (g.all_entities) {
      if (pool) {
        pool->for_blocks(p.n_entities, [&](int, std::size_t b, std::size_t e) {
          for (std::size_t i = b; i < e; ++i)
            fn(static_cast<std::int32_t>(i));
        });
      } else {
        for (std::int32_t i = 0; i < p.n_entities; ++i) fn(i);
      }
    } else if (pool && g.touched_entities.size() > 1024) {
      pool->for_blocks(g.touched_entities.size(),
                       [&](int, std::size_t b, std::size_t e) {
                         for (std::size_t i = b; i < e; ++i)
                           fn(g.touched_entities[i]);
                       });
    } else {
      for (std::int32_t i : g.touched_entities) fn(i);
    }
  }

  Optimizer kind_ = Optimizer::Adam;
  std::vector<double> m_entity_, v_entity_, m_rel_, v_rel_;
  std::vector<std::int64_t> t_entity_, t_rel_;
};

}  // namespace hale
