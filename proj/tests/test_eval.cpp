#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hale/eval.hpp"
#include "hale/trainer.hpp"
#include "testutil.hpp"

using namespace hale;

TEST_CASE("rank_query: basics and tie conventions") {
  std::vector<double> scores{0.5, 0.9, 0.1};
  CHECK(rank_query(scores, 1, nullptr) == 1.0);
  CHECK(rank_query(scores, 0, nullptr) == 2.0);

  // three equal candidates: mean rank 2, best 1, worst 3
  std::vector<double> tied{0.3, 0.3, 0.3};
  CHECK(rank_query(tied, 0, nullptr, TieConvention::Mean) == 2.0);
  CHECK(rank_query(tied, 0, nullptr, TieConvention::Best) == 1.0);
  CHECK(rank_query(tied, 0, nullptr, TieConvention::Worst) == 3.0);

  CHECK_THROWS_AS(rank_query(scores, 7, nullptr), Error);
}

TEST_CASE("rank_query: filtering removes known answers but keeps the target") {
  std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
  // 0 and 1 are known-true; ranking target 2 ignores them
  std::vector<std::int32_t> filtered{0, 1};
  CHECK(rank_query(scores, 2, &filtered) == 1.0);
  // target inside the filter list stays rankable
  std::vector<std::int32_t> f2{0, 2};
  CHECK(rank_query(scores, 2, &f2) == 2.0);  // only candidate 1 beats it
}

TEST_CASE("filtered rank never exceeds the unfiltered rank") {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> scores(n);
    for (auto& s : scores) s = rng.uniform(-5, 5);
    const auto target = static_cast<std::int32_t>(rng.below(n));
    std::vector<std::int32_t> filtered;
    for (std::int32_t i = 0; i < static_cast<std::int32_t>(n); ++i) {
      if (rng.uniform() < 0.3) filtered.push_back(i);
    }
    const double with = rank_query(scores, target, &filtered);
    const double without = rank_query(scores, target, nullptr);
    CHECK(with <= without + 1e-12);
  }
}

TEST_CASE("rank_query agrees with the brute-force sorting oracle") {
  Rng rng(33);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + rng.below(12);
    std::vector<double> scores(n);
    // coarse quantization forces plenty of ties
    for (auto& s : scores) s = std::floor(rng.uniform(-3, 3) * 2.0) / 2.0;
    const auto target = static_cast<std::int32_t>(rng.below(n));
    std::vector<std::int32_t> filtered;
    for (std::int32_t i = 0; i < static_cast<std::int32_t>(n); ++i)
      if (rng.uniform() < 0.25 && i != target) filtered.push_back(i);
    for (auto tie : {TieConvention::Mean, TieConvention::Best,
                     TieConvention::Worst}) {
      const double got = rank_query(scores, target, &filtered, tie);
      const double want =
          testutil::brute_force_rank(scores, target, filtered, tie);
      CHECK(got == doctest::Approx(want));
    }
  }
}

TEST_CASE("evaluate_split: direct metric arithmetic") {
  // two entities, identity-style setup engineered so query 0 ranks first
  // and query 1 ranks fourth is impossible with n=2; use rank set {1, 2}
  // instead via a tiny crafted instance, then check a {1,4}-style case
  // through the aggregate helper on ranks directly.
  ParameterSet p;
  p.allocate(4, 2, 2);
  // entities at corners; query (0, r=0) sits exactly on entity 1
  p.entity = {0, 0, 1, 0, 0, 1, 1, 1};
  p.rel_translation = {1, 0, 0, 0};
  TripleSet split;
  split.name = "test";
  split.push(0, 0, 1);  // q = (1,0) = e1 exactly -> rank 1
  FilterIndex empty_filter;
  const ModelSpec m{Model::TransE, 2};
  const ActivationSpec act{Activation::Identity, 1, 1};
  const EvalReport rep = evaluate_split(p, m, act, split, empty_filter);
  CHECK(rep.n_queries == 1);
  CHECK(rep.mrr == doctest::Approx(1.0));
  CHECK(rep.hits_at.at(1) == doctest::Approx(1.0));
  CHECK_FALSE(rep.subsampled);
  CHECK_THROWS_AS(evaluate_split(p, m, act, TripleSet{}, empty_filter), Error);
}

TEST_CASE("metric aggregation: ranks {1,4} give MRR .625, Hits@3 .5") {
  const EvalReport rep = detail_eval::aggregate({1.0, 4.0}, 0.0, false);
  CHECK(rep.mrr == doctest::Approx(0.625));
  CHECK(rep.hits_at.at(1) == doctest::Approx(0.5));
  CHECK(rep.hits_at.at(3) == doctest::Approx(0.5));
  CHECK(rep.hits_at.at(10) == doctest::Approx(1.0));
}

TEST_CASE("hits are monotone and mrr >= hits@1 on random instances") {
  Rng rng(77);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> ranks(1 + rng.below(50));
    for (auto& r : ranks) r = 1.0 + static_cast<double>(rng.below(30));
    const EvalReport rep = detail_eval::aggregate(ranks, 0.0, false);
    CHECK(rep.hits_at.at(1) <= rep.hits_at.at(3));
    CHECK(rep.hits_at.at(3) <= rep.hits_at.at(10));
    CHECK(rep.mrr >= rep.hits_at.at(1) - 1e-12);
    CHECK(rep.mrr <= 1.0);
    for (double r : rep.per_query_ranks) CHECK(r >= 1.0);
  }
}

TEST_CASE("evaluate_split matches a brute-force metric computation") {
  // random 5-entity KG scored by a random model; the oracle recomputes every
  // rank by sorting raw score rows
  const ModelSpec m{Model::RotE, 4};
  const ActivationSpec act{Activation::Hanon, 3, 10};
  for (int trial = 0; trial < 20; ++trial) {
    ParameterSet p = testutil::random_audit_params(m, 5, 4, 100 + trial);
    TripleSet tr = testutil::random_triples(5, 2, 8, 200 + trial);
    const TripleSet aug = augment_reciprocal(tr, 2);
    const FilterIndex filter = build_filter_index(aug, TripleSet{}, TripleSet{});
    const EvalReport rep = evaluate_split(p, m, act, aug, filter);

    double inv_sum = 0.0;
    std::size_t h10 = 0;
    for (std::size_t i = 0; i < aug.size(); ++i) {
      const auto row = score_all(m, act, p, aug.heads[i], aug.relations[i]);
      const auto* f = filter.find(aug.heads[i], aug.relations[i]);
      const double rank = testutil::brute_force_rank(
          row, aug.tails[i], f ? *f : std::vector<std::int32_t>{},
          TieConvention::Mean);
      CHECK(rep.per_query_ranks[i] == doctest::Approx(rank));
      inv_sum += 1.0 / rank;
      if (rank <= 10.0) ++h10;
    }
    CHECK(rep.mrr ==
          doctest::Approx(inv_sum / static_cast<double>(aug.size())));
    CHECK(rep.hits_at.at(10) ==
          doctest::Approx(static_cast<double>(h10) /
                          static_cast<double>(aug.size())));
  }
}

TEST_CASE("evaluation is order-invariant and thread-count independent") {
  const ModelSpec m{Model::RotL, 4};
  const ActivationSpec act{Activation::Halin, 10, 10};
  ParameterSet p = testutil::random_audit_params(m, 30, 4, 5);
  TripleSet tr = testutil::random_triples(30, 2, 60, 6);
  const TripleSet aug = augment_reciprocal(tr, 2);
  const FilterIndex filter = build_filter_index(aug, TripleSet{}, TripleSet{});
  const EvalReport a = evaluate_split(p, m, act, aug, filter);
  ThreadPool pool(3);
  const EvalReport b = evaluate_split(p, m, act, aug, filter, &pool);
  CHECK(a.mrr == doctest::Approx(b.mrr).epsilon(1e-15));
  CHECK(a.per_query_ranks == b.per_query_ranks);
}

TEST_CASE("a full-size snapshot equals evaluate_split") {
  const ModelSpec m{Model::TransE, 4};
  const ActivationSpec act{Activation::Hanon, 3, 10};
  ParameterSet p = testutil::random_audit_params(m, 12, 4, 9);
  TripleSet raw = testutil::random_triples(12, 2, 20, 10);
  const TripleSet aug = augment_reciprocal(raw, 2);
  const FilterIndex filter = build_filter_index(aug, TripleSet{}, TripleSet{});
  const auto idx = snapshot_queries(aug.size(), aug.size(), 4);
  const EvalReport sub =
      evaluate_queries(p, m, act, aug, filter, idx, nullptr);
  const EvalReport full = evaluate_split(p, m, act, aug, filter);
  CHECK(sub.mrr == doctest::Approx(full.mrr).epsilon(1e-15));
  CHECK(sub.hits_at.at(10) == doctest::Approx(full.hits_at.at(10)));
  CHECK(sub.n_queries == full.n_queries);
}

TEST_CASE("snapshot subsample is fixed under a seed") {
  const auto a = snapshot_queries(1000, 100, 9);
  const auto b = snapshot_queries(1000, 100, 9);
  CHECK(a == b);
  CHECK(a.size() == 100);
  std::vector<std::size_t> s = a;
  std::sort(s.begin(), s.end());
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  const auto c = snapshot_queries(1000, 100, 10);
  CHECK(a != c);
  CHECK_THROWS_AS(snapshot_queries(10, 11, 1), Error);
  // m = n: the subsample is the whole split
  auto full = snapshot_queries(8, 8, 3);
  std::sort(full.begin(), full.end());
  for (std::size_t i = 0; i < 8; ++i) CHECK(full[i] == i);
}
