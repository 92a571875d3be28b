#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hale/cache.hpp"
#include "hale/eval.hpp"
#include "hale/gradients.hpp"
#include "hale/optimizer.hpp"

namespace hale {

struct AblationConfig {
  bool use_activation = true;  // off: force Identity activation
  bool use_pos_square = true;  // off: linear alignment term
  bool use_rel_ratio = true;   // off: freeze c_r at 1 with zero gradient
};

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 512;
  double max_seconds = -1.0;  // <= 0: unbounded
  long max_epochs = -1;       // < 0: unbounded
  double eval_interval_seconds = 10.0;
  long snapshot_every_epochs = 1;  // deterministic-mode snapshot cadence
  int snapshot_sample = 500;       // 0: full validation set
  std::uint64_t seed = 42;
  Optimizer optimizer = Optimizer::Adam;
  AblationConfig ablation;
  LossSpec loss;
  ModelSpec model;
  ActivationSpec activation;
  int threads = 0;  // 0: hardware concurrency
  bool deterministic = false;

  bool seconds_bounded() const { return max_seconds > 0.0; }
  bool epochs_bounded() const { return max_epochs >= 0; }

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("lr must be > 0");
    if (batch_size < 1) throw ConfigError("batch-size must be >= 1");
    if (!seconds_bounded() && !epochs_bounded())
      throw ConfigError("at most one of max-seconds/max-epochs may be unbounded");
    if (snapshot_every_epochs < 1)
      throw ConfigError("snapshot-every-epochs must be >= 1");
    if (snapshot_sample < 0) throw ConfigError("snapshot-sample must be >= 0");
    if (deterministic && !epochs_bounded())
      throw ConfigError("deterministic mode needs an epoch budget (max-epochs)");
    if (deterministic && seconds_bounded())
      throw ConfigError(
          "deterministic mode is epoch-driven; leave max-seconds unbounded");
    model.validate();
    loss.validate();
    if (activation.beta <= 0) throw ConfigError("beta must be > 0");
    if (activation.gamma <= 0) throw ConfigError("gamma must be > 0");
  }

  // The ablation-resolved view the kernels consume.
  Objective objective() const {
    Objective obj;
    obj.model = model;
    obj.activation =
        ablation.use_activation ? activation : ActivationSpec{Activation::Identity};
    obj.loss = loss;
    obj.loss.pos_square = ablation.use_pos_square;
    obj.rel_ratio = ablation.use_rel_ratio;
    return obj;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", to_string(c.model.kind)},
                     {"dim", c.model.dim},
                     {"loss", to_string(c.loss.kind)},
                     {"activation", to_string(c.activation.kind)},
                     {"beta", c.activation.beta},
                     {"gamma", c.activation.gamma},
                     {"lambda", c.loss.lambda},
                     {"alpha", c.loss.sample_alpha},
                     {"neg-count", c.loss.neg_count},
                     {"margin", c.loss.margin},
                     {"adv-temperature", c.loss.adv_temperature},
                     {"reg-weight", c.loss.reg_weight},
                     {"reg-radius", c.loss.reg_radius},
                     {"lr", c.learning_rate},
                     {"batch-size", c.batch_size},
                     {"max-seconds", c.max_seconds},
                     {"max-epochs", c.max_epochs},
                     {"eval-interval-seconds", c.eval_interval_seconds},
                     {"snapshot-every-epochs", c.snapshot_every_epochs},
                     {"snapshot-sample", c.snapshot_sample},
                     {"seed", c.seed},
                     {"optimizer", to_string(c.optimizer)},
                     {"threads", c.threads},
                     {"deterministic", c.deterministic},
                     {"use-activation", c.ablation.use_activation},
                     {"pos-square", c.ablation.use_pos_square},
                     {"rel-ratio", c.ablation.use_rel_ratio}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.model.kind = model_from_string(j.at("model").get<std::string>());
  c.model.dim = j.at("dim").get<int>();
  c.loss.kind = loss_from_string(j.at("loss").get<std::string>());
  c.activation.kind =
      activation_from_string(j.at("activation").get<std::string>());
  c.activation.beta = j.at("beta").get<double>();
  c.activation.gamma = j.at("gamma").get<double>();
  c.loss.lambda = j.at("lambda").get<double>();
  c.loss.sample_alpha = j.at("alpha").get<double>();
  c.loss.neg_count = j.at("neg-count").get<int>();
  c.loss.margin = j.at("margin").get<double>();
  c.loss.adv_temperature = j.at("adv-temperature").get<double>();
  c.loss.reg_weight = j.at("reg-weight").get<double>();
  c.loss.reg_radius = j.at("reg-radius").get<double>();
  c.learning_rate = j.at("lr").get<double>();
  c.batch_size = j.at("batch-size").get<int>();
  c.max_seconds = j.at("max-seconds").get<double>();
  c.max_epochs = j.at("max-epochs").get<long>();
  c.eval_interval_seconds = j.at("eval-interval-seconds").get<double>();
  c.snapshot_every_epochs = j.at("snapshot-every-epochs").get<long>();
  c.snapshot_sample = j.at("snapshot-sample").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  c.threads = j.at("threads").get<int>();
  c.deterministic = j.at("deterministic").get<bool>();
  c.ablation.use_activation = j.at("use-activation").get<bool>();
  c.ablation.use_pos_square = j.at("pos-square").get<bool>();
  c.ablation.use_rel_ratio = j.at("rel-ratio").get<bool>();
  c.loss.pos_square = c.ablation.use_pos_square;
}

// Gaussian(0, 1e-3*I) vectors, angles uniform in (-pi, pi], c_r = alpha_r = 1.
inline ParameterSet init_parameters(const ModelSpec& model,
                                    std::int32_t n_entities,
                                    std::int32_t n_relations,
                                    std::uint64_t seed) {
  model.validate();
  ParameterSet p;
  p.allocate(n_entities, n_relations, model.dim);
  Rng rng = Rng(seed).fork(0);
  const double stddev = std::sqrt(1e-3);
  for (auto& x : p.entity) x = rng.normal(0.0, stddev);
  for (auto& x : p.rel_translation) x = rng.normal(0.0, stddev);
  for (auto& x : p.rel_second) x = rng.normal(0.0, stddev);
  const double pi = 3.14159265358979323846;
  for (auto& x : p.rel_angles) x = pi - 2.0 * pi * rng.uniform();
  return p;
}

struct SnapshotRecord {
  double elapsed_s = 0.0;  // training clock; epoch counter in deterministic mode
  long epoch = 0;
  double mrr = 0.0, hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
  bool subsampled = false;
};

struct Checkpoint {
  ParameterSet params;
  TrainConfig config;
  long epoch = 0;
  double elapsed_seconds = 0.0;
  double best_validation_mrr = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<SnapshotRecord> log;
  long epochs_completed = 0;
  long steps = 0;
  double train_clock_seconds = 0.0;  // wall time minus snapshot-eval time
  double eval_seconds = 0.0;
  std::size_t flex_saturation_events = 0;  // clamped flexible-add denominators
};

inline void write_metrics_record(std::ostream& out, const SnapshotRecord& r) {
  nlohmann::json j{{"elapsed_s", r.elapsed_s}, {"epoch", r.epoch},
                   {"mrr", r.mrr},             {"hits1", r.hits1},
                   {"hits3", r.hits3},         {"hits10", r.hits10}};
  out << j.dump() << "\n";
  out.flush();
}

// Epoch loop: resample the query subset (HaLE), shuffle, batch, gradient
// step; periodic validation snapshots; stops on the wall-clock or epoch
// budget. Snapshot evaluation is timed separately and does not count against
// the budget. Returns the best-validation-MRR checkpoint plus the full log.
inline TrainResult train(const TrainConfig& cfg, const PreparedData& data,
                         ThreadPool& pool,
                         std::ostream* metrics_jsonl = nullptr,
                         std::ostream* info = nullptr) {
  cfg.validate();
  const Objective obj = cfg.objective();
  const std::size_t n_t = data.train.size();
  if (n_t == 0) throw Error("train: empty training split");

  TrainResult res;
  res.best.config = cfg;
  res.best.params = init_parameters(cfg.model, data.n_entities,
                                    data.n_relations_aug, cfg.seed);
  if (cfg.max_epochs == 0) return res;

  ParameterSet params = res.best.params;
  OptimizerState opt;
  opt.init(cfg.optimizer, params);
  GradBuffer grads;
  grads.init(params);
  detail::RowScratch scratch;

  Rng base(cfg.seed);
  Rng shuffle_rng = base.fork(1);
  Rng sample_rng = base.fork(2);
  Rng neg_rng = base.fork(3);

  // Fixed validation subsample shared by every snapshot of this run.
  const std::size_t n_valid = data.valid.size();
  std::size_t snap_m = cfg.snapshot_sample == 0
                           ? n_valid
                           : std::min<std::size_t>(cfg.snapshot_sample, n_valid);
  Rng snap_rng = base.fork(4);
  const std::vector<std::size_t> snap_idx =
      snapshot_queries(n_valid, snap_m, snap_rng.next_u64());
  const bool subsampled = snap_m < n_valid;
  const bool can_snapshot = n_valid > 0;

  if (obj.loss.kind == LossKind::HaLE && obj.loss.sample_alpha == 0.0 && info) {
    *info << "warning: alpha = 0, query-sampling loss degenerates to "
             "alignment-only\n";
  }

  const auto wall_start = std::chrono::steady_clock::now();
  double eval_total = 0.0;
  auto train_clock = [&]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         wall_start)
               .count() -
           eval_total;
  };

  double best_mrr = -1.0;
  double last_snapshot_clock = 0.0;

  auto take_snapshot = [&](long epoch) {
    if (!can_snapshot) return;
    const double at = cfg.deterministic ? static_cast<double>(epoch)
                                        : train_clock();
    const auto t0 = std::chrono::steady_clock::now();
    EvalReport rep =
        evaluate_queries(params, obj.model, obj.activation, data.valid,
                         data.filter, snap_idx, &pool, TieConvention::Mean,
                         subsampled);
    eval_total += std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    SnapshotRecord rec{at,          epoch,           rep.mrr,
                       rep.hits_at[1], rep.hits_at[3], rep.hits_at[10]};
    rec.subsampled = subsampled;
    res.log.push_back(rec);
    if (metrics_jsonl) write_metrics_record(*metrics_jsonl, rec);
    if (rep.mrr > best_mrr) {
      best_mrr = rep.mrr;
      res.best.params = params;
      res.best.epoch = epoch;
      res.best.elapsed_seconds = cfg.deterministic ? static_cast<double>(epoch)
                                                   : train_clock();
      res.best.best_validation_mrr = best_mrr;
    }
    res.eval_seconds = eval_total;
  };

  std::vector<std::size_t> perm(n_t);
  for (std::size_t i = 0; i < n_t; ++i) perm[i] = i;

  Batch batch;
  batch.triples = &data.train;
  const int k = obj.loss.neg_count;
  const bool needs_negs =
      obj.loss.kind == LossKind::SamNeg || obj.loss.kind == LossKind::AdvNeg;

  bool out_of_budget = false;
  double epoch_loss_sum = 0.0;
  long epoch_loss_n = 0;
  for (long epoch = 1; !out_of_budget; ++epoch) {
    if (cfg.epochs_bounded() && epoch > cfg.max_epochs) break;
    epoch_loss_sum = 0.0;
    epoch_loss_n = 0;

    shuffle_rng.shuffle(perm);
    QuerySample sample;
    if (obj.loss.kind == LossKind::HaLE && obj.loss.sample_alpha > 0.0) {
      sample = sample_queries(n_t, obj.loss.sample_alpha, sample_rng, epoch);
    }
    const std::size_t n_batches = (n_t + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t n_sampled = sample.indices.size();

    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n_t, lo + cfg.batch_size);
      batch.positives.assign(perm.begin() + static_cast<long>(lo),
                             perm.begin() + static_cast<long>(hi));
      const std::size_t s_lo = b * n_sampled / n_batches;
      const std::size_t s_hi = (b + 1) * n_sampled / n_batches;
      batch.sampled.assign(sample.indices.begin() + static_cast<long>(s_lo),
                           sample.indices.begin() + static_cast<long>(s_hi));
      if (needs_negs) {
        batch.neg_count = k;
        batch.negatives.resize(batch.positives.size() * k);
        for (auto& n : batch.negatives)
          n = static_cast<std::int32_t>(neg_rng.below(data.n_entities));
      }

      grads.clear(&pool);
      double loss;
      try {
        loss = compute_gradients(obj, params, batch, grads, &pool, nullptr,
                                 &scratch);
      } catch (const Error& e) {
        throw Error(std::string(e.what()) + " (epoch " +
                    std::to_string(epoch) + ", batch " + std::to_string(b) +
                    ")");
      }
      epoch_loss_sum += loss;
      ++epoch_loss_n;
      res.flex_saturation_events += grads.flex_saturations;
      opt.apply(params, grads, cfg.learning_rate, obj.rel_ratio, &pool);
      ++res.steps;

      if (!cfg.deterministic) {
        const double clock = train_clock();
        if (cfg.seconds_bounded() && clock > cfg.max_seconds) {
          if (res.steps == 1) {
            throw Error("time budget smaller than one batch step");
          }
          out_of_budget = true;
        }
        if (!out_of_budget && cfg.eval_interval_seconds > 0.0 &&
            clock - last_snapshot_clock >= cfg.eval_interval_seconds) {
          take_snapshot(epoch);
          last_snapshot_clock = train_clock();
        }
        if (out_of_budget) break;
      }
    }
    res.epochs_completed = epoch;
    if (info && epoch_loss_n > 0 && (epoch % 50 == 0 || epoch <= 3)) {
      *info << "epoch " << epoch << " mean batch loss "
            << epoch_loss_sum / static_cast<double>(epoch_loss_n) << "\n";
    }
    if (cfg.deterministic && epoch % cfg.snapshot_every_epochs == 0) {
      take_snapshot(epoch);
    }
  }

  // Closing snapshot so the run always ends with a fresh validation point.
  if (res.epochs_completed > 0) {
    const bool already = cfg.deterministic && !res.log.empty() &&
                         res.log.back().epoch == res.epochs_completed;
    if (!already) take_snapshot(res.epochs_completed);
  }

  res.train_clock_seconds = train_clock();
  if (res.log.empty()) {
    // No validation point was ever taken; the final state is the best known.
    res.best.params = params;
    res.best.epoch = res.epochs_completed;
    res.best.elapsed_seconds = cfg.deterministic
                                   ? static_cast<double>(res.epochs_completed)
                                   : res.train_clock_seconds;
  } else {
    res.best.best_validation_mrr = best_mrr;
  }
  if (info) {
    *info << "trained " << res.epochs_completed << " epochs, " << res.steps
          << " steps; train clock " << res.train_clock_seconds
          << " s; snapshot eval " << res.eval_seconds << " s (off budget)\n";
    if (res.flex_saturation_events > 0) {
      *info << "flexible-add denominator clamped " << res.flex_saturation_events
            << " times\n";
    }
  }
  return res;
}

// ---- checkpoint file ---------------------------------------------------------
//
// "HALECKPT", u32 version, u32 config-json length + bytes, u32 shape triple,
// u64 epoch, f64 elapsed, f64 best MRR, parameter blocks as LE f64, then a
// 64-bit FNV-1a of everything before the trailer.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  std::vector<unsigned char> buf;
  const char magic[8] = {'H', 'A', 'L', 'E', 'C', 'K', 'P', 'T'};
  buf.insert(buf.end(), magic, magic + 8);
  put_u32(buf, kCheckpointVersion);
  nlohmann::json cj = cp.config;
  const std::string cfg = cj.dump();
  put_u32(buf, static_cast<std::uint32_t>(cfg.size()));
  buf.insert(buf.end(), cfg.begin(), cfg.end());
  const ParameterSet& p = cp.params;
  put_u32(buf, static_cast<std::uint32_t>(p.n_entities));
  put_u32(buf, static_cast<std::uint32_t>(p.n_relations));
  put_u32(buf, static_cast<std::uint32_t>(p.dim));
  put_u64(buf, static_cast<std::uint64_t>(cp.epoch));
  put_f64(buf, cp.elapsed_seconds);
  put_f64(buf, cp.best_validation_mrr);
  for (const auto* block :
       {&p.entity, &p.rel_translation, &p.rel_second, &p.rel_angles,
        &p.rel_scale, &p.rel_flex}) {
    for (double x : *block) put_f64(buf, x);
  }
  put_u64(buf, fnv1a64(buf.data(), buf.size()));
  detail::write_file(path, buf.data(), buf.size());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const auto buf = detail::read_file(path);
  if (buf.size() < 16) throw Error("checkpoint truncated: " + path);
  {
    ByteReader tail(buf.data() + buf.size() - 8, 8);
    const std::uint64_t stored = tail.u64();
    const std::uint64_t actual = fnv1a64(buf.data(), buf.size() - 8);
    if (stored != actual)
      throw Error("checkpoint checksum mismatch (corrupt or truncated): " +
                  path);
  }
  ByteReader r(buf.data(), buf.size() - 8);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, "HALECKPT", 8) != 0)
    throw Error("bad checkpoint magic: " + path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t cfg_len = r.u32();
  std::string cfg(cfg_len, '\0');
  r.bytes(cfg.data(), cfg_len);
  Checkpoint cp;
  cp.config = nlohmann::json::parse(cfg).get<TrainConfig>();
  const auto n_e = static_cast<std::int32_t>(r.u32());
  const auto n_r = static_cast<std::int32_t>(r.u32());
  const auto dim = static_cast<int>(r.u32());
  cp.epoch = static_cast<long>(r.u64());
  cp.elapsed_seconds = r.f64();
  cp.best_validation_mrr = r.f64();
  cp.params.allocate(n_e, n_r, dim);
  for (auto* block :
       {&cp.params.entity, &cp.params.rel_translation, &cp.params.rel_second,
        &cp.params.rel_angles, &cp.params.rel_scale, &cp.params.rel_flex}) {
    for (auto& x : *block) x = r.f64();
  }
  if (r.remaining() != 0) throw Error("checkpoint has trailing bytes: " + path);
  return cp;
}

// Guard for consumers that pair a checkpoint with a dataset cache.
inline void verify_checkpoint_shape(const Checkpoint& cp, std::int32_t n_e,
                                    std::int32_t n_rel, int dim) {
  if (cp.params.n_entities != n_e || cp.params.n_relations != n_rel ||
      cp.params.dim != dim) {
    throw Error("checkpoint shape mismatch: file has " +
                std::to_string(cp.params.n_entities) + "x" +
                std::to_string(cp.params.dim) + " entities/dim, " +
                std::to_string(cp.params.n_relations) +
                " relations; expected " + std::to_string(n_e) + "x" +
                std::to_string(dim) + ", " + std::to_string(n_rel));
  }
}

}  // namespace hale
