#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "hale/trainer.hpp"
#include "testutil.hpp"

using namespace hale;

namespace {

// 3-entity / 4-triple toy graph (plus reciprocals) every strategy can
// memorize quickly. Relations are acyclic fan-out/fan-in maps, so even
// TransE can rank them perfectly.
PreparedData toy_kg() {
  Dataset ds;
  RawTriples raw{{"a", "r0", "b"}, {"a", "r0", "c"}, {"b", "r1", "a"},
                 {"c", "r1", "a"}};
  ds.vocab = build_vocabulary(raw);
  ds.train = encode_split(raw, ds.vocab, "train");
  ds.valid = ds.train;
  ds.valid.name = "valid";
  ds.test = ds.train;
  ds.test.name = "test";
  return prepare_for_training(ds);
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.model = {Model::TransE, 4};
  cfg.loss.kind = LossKind::HaLE;
  cfg.loss.lambda = 1.0;
  cfg.loss.sample_alpha = 0.5;
  cfg.activation = {Activation::Hanon, 3.0, 10.0};
  cfg.learning_rate = 0.05;
  cfg.batch_size = 8;
  cfg.max_seconds = -1;
  cfg.max_epochs = 200;
  cfg.deterministic = true;
  cfg.snapshot_every_epochs = 50;
  cfg.snapshot_sample = 0;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("train with max_epochs 0 returns the initialized checkpoint") {
  const PreparedData data = toy_kg();
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 0;
  ThreadPool pool(1);
  const TrainResult res = train(cfg, data, pool);
  CHECK(res.log.empty());
  CHECK(res.epochs_completed == 0);
  const ParameterSet fresh = init_parameters(cfg.model, data.n_entities,
                                             data.n_relations_aug, cfg.seed);
  CHECK(res.best.params.entity == fresh.entity);
}

TEST_CASE("config validation rejects inconsistent budgets") {
  TrainConfig cfg = toy_config();
  cfg.max_epochs = -1;
  cfg.max_seconds = -1;
  cfg.deterministic = false;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.max_seconds = 10;
  CHECK_NOTHROW(cfg.validate());
  cfg.deterministic = true;  // deterministic mode must be epoch-driven
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.max_seconds = -1;
  cfg.max_epochs = 5;
  CHECK_NOTHROW(cfg.validate());
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("hale memorizes the toy graph to filtered MRR 1") {
  const PreparedData data = toy_kg();
  const TrainConfig cfg = toy_config();
  ThreadPool pool(1);
  const TrainResult res = train(cfg, data, pool);
  const Objective obj = cfg.objective();
  const EvalReport rep = evaluate_split(res.best.params, obj.model,
                                        obj.activation, data.test, data.filter,
                                        &pool);
  CHECK(rep.mrr == doctest::Approx(1.0));
  // loss decreased: the best checkpoint beats the initialization
  const ParameterSet fresh = init_parameters(cfg.model, data.n_entities,
                                             data.n_relations_aug, cfg.seed);
  const EvalReport before = evaluate_split(fresh, obj.model, obj.activation,
                                           data.test, data.filter, &pool);
  CHECK(rep.mrr > before.mrr);
}

TEST_CASE("deterministic runs produce identical snapshot logs") {
  const PreparedData data = toy_kg();
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 60;
  ThreadPool pool(2);
  std::ostringstream m1, m2;
  const TrainResult a = train(cfg, data, pool, &m1);
  const TrainResult b = train(cfg, data, pool, &m2);
  CHECK(m1.str() == m2.str());
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].elapsed_s == b.log[i].elapsed_s);
    CHECK(a.log[i].mrr == b.log[i].mrr);
  }
  CHECK(a.best.params.entity == b.best.params.entity);
}

TEST_CASE("snapshot log is strictly increasing in elapsed_s") {
  const PreparedData data = toy_kg();
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 100;
  cfg.snapshot_every_epochs = 20;
  ThreadPool pool(1);
  const TrainResult res = train(cfg, data, pool);
  REQUIRE(res.log.size() > 1);
  for (std::size_t i = 1; i < res.log.size(); ++i)
    CHECK(res.log[i].elapsed_s > res.log[i - 1].elapsed_s);
}

TEST_CASE("a budget smaller than one batch step is an error") {
  const PreparedData data = toy_kg();
  TrainConfig cfg = toy_config();
  cfg.deterministic = false;
  cfg.max_epochs = -1;
  cfg.max_seconds = 1e-9;
  ThreadPool pool(1);
  CHECK_THROWS_WITH_AS(train(cfg, data, pool), doctest::Contains("budget"),
                       Error);
}

TEST_CASE("rotl saturation events are counted, not raised") {
  // head rotated onto r' with alpha-denominator 1 - <u, y> forced to ~0
  Dataset ds;
  RawTriples raw{{"a", "r", "b"}};
  ds.vocab = build_vocabulary(raw);
  ds.train = encode_split(raw, ds.vocab, "train");
  ds.valid = ds.train;
  ds.test = ds.train;
  const PreparedData data = prepare_for_training(ds);

  TrainConfig cfg = toy_config();
  cfg.model = {Model::RotL, 2};
  cfg.max_epochs = 1;
  cfg.batch_size = 2;
  ThreadPool pool(1);
  // craft parameters where <Rot(e_a), r'> = 1 exactly, then run one batch
  ParameterSet p = init_parameters(cfg.model, data.n_entities,
                                   data.n_relations_aug, cfg.seed);
  p.rel_angles.assign(p.rel_angles.size(), 0.0);
  p.entity = {1.0, 0.0, 0.0, 1.0};
  p.rel_second = {1.0, 0.0, 0.0, 1.0};
  Batch b;
  b.triples = &data.train;
  b.positives = {0, 1};
  GradBuffer g;
  g.init(p);
  const Objective obj = cfg.objective();
  CHECK_NOTHROW(compute_gradients(obj, p, b, g));
  CHECK(g.flex_saturations > 0);
}

TEST_CASE("wall-clock budget is honored with one-batch slack") {
  const PreparedData data = toy_kg();
  TrainConfig cfg = toy_config();
  cfg.deterministic = false;
  cfg.max_epochs = -1;
  cfg.max_seconds = 0.3;
  cfg.eval_interval_seconds = 0.1;
  ThreadPool pool(1);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = train(cfg, data, pool);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  CHECK(res.train_clock_seconds >= 0.0);
  // generous slack: toy batches are microseconds, snapshots excluded
  CHECK(res.train_clock_seconds <= cfg.max_seconds + 0.2);
  CHECK(wall < 30.0);
  CHECK(res.epochs_completed > 0);
}

TEST_CASE("every strategy trains the toy graph without blowing up") {
  const PreparedData data = toy_kg();
  ThreadPool pool(1);
  for (LossKind kind : {LossKind::HaLE, LossKind::SamNeg, LossKind::AdvNeg,
                        LossKind::AllNeg, LossKind::NonNeg}) {
    TrainConfig cfg = toy_config();
    cfg.loss.kind = kind;
    cfg.loss.neg_count = 2;
    cfg.loss.reg_weight = 0.1;
    cfg.max_epochs = 150;
    if (kind != LossKind::HaLE) cfg.activation.kind = Activation::Identity;
    const TrainResult res = train(cfg, data, pool);
    const Objective obj = cfg.objective();
    const EvalReport rep =
        evaluate_split(res.best.params, obj.model, obj.activation, data.test,
                       data.filter, &pool);
    CAPTURE(to_string(kind));
    CHECK(rep.mrr > 0.3);  // wildly better than random over 3 entities
  }
}

TEST_CASE("hardness-aware activation composes with baseline losses") {
  // the samneg/allneg strategies consume f_ha scores, so pairing them with
  // hanon and a trainable c_r is just configuration
  const PreparedData data = toy_kg();
  ThreadPool pool(1);
  for (LossKind kind : {LossKind::SamNeg, LossKind::AllNeg}) {
    TrainConfig cfg = toy_config();
    cfg.loss.kind = kind;
    cfg.loss.neg_count = 2;
    cfg.activation = {Activation::Hanon, 3.0, 10.0};
    cfg.ablation.use_rel_ratio = true;
    cfg.max_epochs = 100;
    const Objective obj = cfg.objective();
    CHECK(obj.activation.kind == Activation::Hanon);
    CHECK(obj.rel_ratio);
    const TrainResult res = train(cfg, data, pool);
    const EvalReport rep =
        evaluate_split(res.best.params, obj.model, obj.activation, data.test,
                       data.filter, &pool);
    CHECK(rep.mrr > 0.3);
  }
}

TEST_CASE("ablation toggles flow through to the objective") {
  TrainConfig cfg = toy_config();
  cfg.activation.kind = Activation::Hanon;
  cfg.ablation.use_activation = false;
  cfg.ablation.use_pos_square = false;
  cfg.ablation.use_rel_ratio = false;
  const Objective obj = cfg.objective();
  CHECK(obj.activation.kind == Activation::Identity);
  CHECK_FALSE(obj.loss.pos_square);
  CHECK_FALSE(obj.rel_ratio);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const PreparedData data = toy_kg();
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 20;
  ThreadPool pool(1);
  const TrainResult res = train(cfg, data, pool);

  testutil::TempDir tmp;
  const std::string path = tmp.file("model.ckpt");
  save_checkpoint(path, res.best);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.params.entity == res.best.params.entity);
  CHECK(back.params.rel_angles == res.best.params.rel_angles);
  CHECK(back.params.rel_scale == res.best.params.rel_scale);
  CHECK(back.epoch == res.best.epoch);
  CHECK(back.best_validation_mrr == res.best.best_validation_mrr);
  CHECK(back.config.loss.kind == cfg.loss.kind);
  CHECK(back.config.seed == cfg.seed);

  // identical scores on random triples
  const Objective obj = cfg.objective();
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto h = static_cast<std::int32_t>(rng.below(data.n_entities));
    const auto r = static_cast<std::int32_t>(rng.below(data.n_relations_aug));
    const auto t = static_cast<std::int32_t>(rng.below(data.n_entities));
    CHECK(score_triple(obj.model, obj.activation, res.best.params, h, r, t) ==
          score_triple(obj.model, obj.activation, back.params, h, r, t));
  }
}

TEST_CASE("checkpoint corruption and shape mismatches are detected") {
  const PreparedData data = toy_kg();
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 1;
  ThreadPool pool(1);
  const TrainResult res = train(cfg, data, pool);
  testutil::TempDir tmp;
  const std::string path = tmp.file("model.ckpt");
  save_checkpoint(path, res.best);

  // truncation breaks the checksum
  auto bytes = detail::read_file(path);
  testutil::write_text(tmp.file("trunc.ckpt"),
                       std::string(bytes.begin(), bytes.end() - 9));
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp.file("trunc.ckpt")),
                       doctest::Contains("checksum"), Error);

  // flipped byte breaks the checksum too
  bytes[40] ^= 0xff;
  {
    std::ofstream out(tmp.file("flip.ckpt"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.file("flip.ckpt")), Error);

  const Checkpoint good = load_checkpoint(path);
  CHECK_THROWS_WITH_AS(
      verify_checkpoint_shape(good, data.n_entities, data.n_relations_aug, 8),
      doctest::Contains("shape"), Error);
  CHECK_NOTHROW(verify_checkpoint_shape(good, data.n_entities,
                                        data.n_relations_aug, 4));
}

TEST_CASE("train config survives the json round trip") {
  TrainConfig cfg = toy_config();
  cfg.loss.kind = LossKind::AdvNeg;
  cfg.loss.adv_temperature = 0.25;
  cfg.optimizer = Optimizer::SGD;
  cfg.ablation.use_rel_ratio = false;
  nlohmann::json j = cfg;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(back.loss.kind == cfg.loss.kind);
  CHECK(back.loss.adv_temperature == cfg.loss.adv_temperature);
  CHECK(back.optimizer == cfg.optimizer);
  CHECK(back.ablation.use_rel_ratio == cfg.ablation.use_rel_ratio);
  CHECK(back.model.dim == cfg.model.dim);
  CHECK(back.seed == cfg.seed);
}

TEST_CASE("alpha=0 degenerates to alignment-only with a warning") {
  const PreparedData data = toy_kg();
  TrainConfig cfg = toy_config();
  cfg.loss.sample_alpha = 0.0;
  cfg.max_epochs = 5;
  ThreadPool pool(1);
  std::ostringstream info;
  const TrainResult res = train(cfg, data, pool, nullptr, &info);
  CHECK(res.epochs_completed == 5);
  CHECK(info.str().find("alpha = 0") != std::string::npos);
}
