#pragma once

#include <chrono>
#include <map>
#include <span>
#include <vector>

#include "hale/gradients.hpp"
#include "hale/kgdata.hpp"
#include "hale/parallel.hpp"
#include "hale/scoring.hpp"

namespace hale {

enum class TieConvention { Mean, Best, Worst };

inline const char* to_string(TieConvention t) {
  switch (t) {
    case TieConvention::Mean: return "mean";
    case TieConvention::Best: return "best";
    case TieConvention::Worst: return "worst";
  }
  return "?";
}

inline TieConvention tie_from_string(const std::string& s) {
  if (s == "mean") return TieConvention::Mean;
  if (s == "best") return TieConvention::Best;
  if (s == "worst") return TieConvention::Worst;
  throw ConfigError("unknown tie convention: " + s);
}

struct EvalReport {
  std::vector<double> per_query_ranks;
  double mrr = 0.0;
  std::map<int, double> hits_at;  // {1, 3, 10}
  std::size_t n_queries = 0;
  double elapsed_seconds = 0.0;
  bool subsampled = false;
};

// Filtered rank of `target` within one score row. Candidates listed in
// `filtered_out` are removed (the target itself always stays). Mean-tie:
// rank = 1 + #strictly_greater + 0.5 * #equal_others.
inline double rank_query(std::span<const double> scores, std::int32_t target,
                         const std::vector<std::int32_t>* filtered_out,
                         TieConvention tie = TieConvention::Mean) {
  if (target < 0 || static_cast<std::size_t>(target) >= scores.size())
    throw Error("rank_query: target id out of range");
  const double s_t = scores[target];
  std::size_t greater = 0, equal = 0;
  std::size_t fpos = 0;
  const std::size_t fsize = filtered_out ? filtered_out->size() : 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (fpos < fsize &&
        static_cast<std::size_t>((*filtered_out)[fpos]) == i) {
      ++fpos;
      if (static_cast<std::int32_t>(i) != target) continue;
    }
    if (static_cast<std::int32_t>(i) == target) continue;
    if (scores[i] > s_t) {
      ++greater;
    } else if (scores[i] == s_t) {
      ++equal;
    }
  }
  switch (tie) {
    case TieConvention::Mean:
      return 1.0 + static_cast<double>(greater) + 0.5 * static_cast<double>(equal);
    case TieConvention::Best:
      return 1.0 + static_cast<double>(greater);
    case TieConvention::Worst:
      return 1.0 + static_cast<double>(greater) + static_cast<double>(equal);
  }
  return 0.0;
}

namespace detail_eval {

inline EvalReport aggregate(std::vector<double> ranks, double elapsed,
                            bool subsampled) {
  EvalReport rep;
  rep.n_queries = ranks.size();
  rep.elapsed_seconds = elapsed;
  rep.subsampled = subsampled;
  double inv_sum = 0.0;
  std::size_t h1 = 0, h3 = 0, h10 = 0;
  for (double r : ranks) {
    inv_sum += 1.0 / r;
    if (r <= 1.0) ++h1;
    if (r <= 3.0) ++h3;
    if (r <= 10.0) ++h10;
  }
  const double n = ranks.empty() ? 1.0 : static_cast<double>(ranks.size());
  rep.mrr = inv_sum / n;
  rep.hits_at[1] = static_cast<double>(h1) / n;
  rep.hits_at[3] = static_cast<double>(h3) / n;
  rep.hits_at[10] = static_cast<double>(h10) / n;
  rep.per_query_ranks = std::move(ranks);
  return rep;
}

}  // namespace detail_eval

// Ranks a set of queries (given as indices into an augmented split) under the
// filtered protocol. Queries are independent; they parallelize freely against
// the immutable parameter snapshot.
inline EvalReport evaluate_queries(const ParameterSet& params,
                                   const ModelSpec& model,
                                   const ActivationSpec& act,
                                   const TripleSet& split,
                                   const FilterIndex& filter,
                                   std::span<const std::size_t> queries,
                                   ThreadPool* pool,
                                   TieConvention tie = TieConvention::Mean,
                                   bool subsampled = false) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> e_sq;
  detail::compute_entity_sq_norms(params, e_sq, pool);
  std::vector<double> ranks(queries.size());

  auto work = [&](int, std::size_t b, std::size_t e) {
    std::vector<double> row(params.n_entities);
    for (std::size_t k = b; k < e; ++k) {
      const std::size_t i = queries[k];
      score_all(model, act, params, split.heads[i], split.relations[i], e_sq,
                row);
      const auto* filtered =
          filter.find(split.heads[i], split.relations[i]);
      ranks[k] = rank_query(row, split.tails[i], filtered, tie);
    }
  };
  if (pool) {
    pool->for_blocks(queries.size(), work);
  } else {
    work(0, 0, queries.size());
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return detail_eval::aggregate(std::move(ranks), elapsed, subsampled);
}

// Full filtered evaluation of an augmented split (one query per triple; the
// augmentation already contributed the inverse-relation query for each raw
// test triple, so both prediction directions are covered).
inline EvalReport evaluate_split(const ParameterSet& params,
                                 const ModelSpec& model,
                                 const ActivationSpec& act,
                                 const TripleSet& split,
                                 const FilterIndex& filter,
                                 ThreadPool* pool = nullptr,
                                 TieConvention tie = TieConvention::Mean) {
  if (split.empty()) throw Error("evaluate_split: empty split");
  std::vector<std::size_t> all(split.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return evaluate_queries(params, model, act, split, filter, all, pool, tie);
}

// Fixed, seed-determined subsample of validation queries used for periodic
// snapshots; the same subsample is reused across all snapshots of a run.
inline std::vector<std::size_t> snapshot_queries(std::size_t n_queries,
                                                 std::size_t m,
                                                 std::uint64_t seed) {
  if (m > n_queries) throw Error("snapshot_queries: sample exceeds split");
  Rng rng(seed);
  std::vector<std::size_t> pool(n_queries);
  for (std::size_t i = 0; i < n_queries; ++i) pool[i] = i;
  std::vector<std::size_t> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + rng.below(n_queries - i);
    std::swap(pool[i], pool[j]);
    out[i] = pool[i];
  }
  return out;
}

}  // namespace hale
