#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <thread>

#include "hale/config.hpp"
#include "hale/trainer.hpp"

namespace hale::cli {

inline void print_usage(std::ostream& out) {
  out << "usage: hale <command> [--key value ...]\n"
         "\n"
         "commands:\n"
         "  prepare    --dataset-dir D --out-dir O     ingest TSV splits, write binary cache\n"
         "  train      --cache C --out-dir O [...]     train a model, write checkpoint + metrics\n"
         "  eval       --checkpoint F --cache C [...]  filtered link-prediction evaluation\n"
         "  benchmark  --cache C --out-dir O --variants a,b,...   race strategies/activations\n"
         "  export     --checkpoint F --cache C --out T.tsv       dump entity embeddings\n"
         "\n"
         "train/benchmark accept --config FILE (flat key=value, '#' comments); any key\n"
         "in the file can be overridden with --key value. Unknown keys are fatal.\n"
         "HALE_THREADS overrides the worker count when --threads is 0 (auto).\n";
}

namespace detail_cli {

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    const std::string tok =
        s.substr(start, comma == std::string::npos ? comma : comma - start);
    if (!tok.empty()) out.push_back(tok);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Pull `--config FILE` out of the flag list; it is applied before the rest so
// command-line flags override file values.
inline KeyValueConfig resolve_run_config(std::vector<std::string> args) {
  KeyValueConfig cfg = run_config_schema();
  std::string config_file;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      config_file = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i),
                 args.begin() + static_cast<long>(i) + 2);
      break;
    }
  }
  if (!config_file.empty()) cfg.load_file(config_file);
  cfg.apply_flags(args);
  return cfg;
}

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("HALE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

inline void require(const KeyValueConfig& cfg, const char* key) {
  if (cfg.get_string(key).empty())
    throw ConfigError(std::string("missing required key: ") + key);
}

// Bad paths passed on the command line are usage errors (exit 2), not
// runtime failures.
inline void require_exists(const std::string& path, const char* what) {
  if (!std::filesystem::exists(path))
    throw ConfigError(std::string(what) + " not found: " + path);
}

inline nlohmann::json report_json(const EvalReport& rep,
                                  const std::string& split,
                                  TieConvention tie) {
  nlohmann::json j;
  j["split"] = split;
  j["n_queries"] = rep.n_queries;
  j["mrr"] = rep.mrr;
  j["hits1"] = rep.hits_at.at(1);
  j["hits3"] = rep.hits_at.at(3);
  j["hits10"] = rep.hits_at.at(10);
  j["elapsed_seconds"] = rep.elapsed_seconds;
  j["tie"] = to_string(tie);
  j["subsampled"] = rep.subsampled;
  return j;
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << body;
}

}  // namespace detail_cli

inline int cmd_prepare(const std::vector<std::string>& args) {
  KeyValueConfig cfg;
  cfg.declare("dataset-dir", "", "directory with train.txt/valid.txt/test.txt");
  cfg.declare("out-dir", "", "cache output directory");
  cfg.apply_flags(args);
  detail_cli::require(cfg, "dataset-dir");
  detail_cli::require(cfg, "out-dir");
  const std::string dir = cfg.get_string("dataset-dir");
  for (const char* split : {"train.txt", "valid.txt", "test.txt"}) {
    const std::string p = dir + "/" + split;
    if (!std::filesystem::exists(p))
      throw ConfigError("missing split file: " + p);
  }
  const Dataset ds = load_dataset_dir(dir);
  write_cache(cfg.get_string("out-dir"), ds);
  nlohmann::json stats{{"n_entities", ds.n_entities()},
                       {"n_relations", ds.n_relations()},
                       {"train", ds.train.size()},
                       {"valid", ds.valid.size()},
                       {"test", ds.test.size()}};
  std::cout << stats.dump(2) << "\n";
  return 0;
}

inline int cmd_train(const std::vector<std::string>& args) {
  KeyValueConfig cfg = detail_cli::resolve_run_config(args);
  detail_cli::require(cfg, "cache");
  detail_cli::require(cfg, "out-dir");
  detail_cli::require_exists(cfg.get_string("cache") + "/triples.bin",
                             "dataset cache");
  TrainConfig tc = make_train_config(cfg);
  tc.validate();
  const std::string cache_dir = cfg.get_string("cache");
  const std::string out_dir = cfg.get_string("out-dir");
  std::filesystem::create_directories(out_dir);

  const int threads = detail_cli::resolve_threads(tc.threads);
  const nlohmann::json manifest =
      make_run_manifest("train", cfg, cache_dir, threads);
  detail_cli::write_text_file(out_dir + "/manifest.json",
                              manifest.dump(2) + "\n");

  const Dataset ds = read_cache(cache_dir);
  const PreparedData data = prepare_for_training(ds);

  ThreadPool pool(threads);
  std::ofstream metrics(out_dir + "/metrics.jsonl", std::ios::trunc);
  if (!metrics) throw Error("cannot write " + out_dir + "/metrics.jsonl");

  TrainResult res = train(tc, data, pool, &metrics, &std::cerr);
  save_checkpoint(out_dir + "/best.ckpt", res.best);

  const TieConvention tie = tie_from_string(cfg.get_string("tie"));
  const Objective obj = tc.objective();
  EvalReport test_rep = evaluate_split(res.best.params, obj.model,
                                       obj.activation, data.test, data.filter,
                                       &pool, tie);
  nlohmann::json out = detail_cli::report_json(test_rep, "test", tie);
  out["best_validation_mrr"] = res.best.best_validation_mrr;
  out["epochs"] = res.epochs_completed;
  out["steps"] = res.steps;
  out["train_clock_seconds"] = res.train_clock_seconds;
  out["snapshot_eval_seconds"] = res.eval_seconds;
  detail_cli::write_text_file(out_dir + "/test_metrics.json",
                              out.dump(2) + "\n");
  std::cout << out.dump(2) << "\n";
  return 0;
}

inline int cmd_eval(const std::vector<std::string>& args) {
  KeyValueConfig cfg;
  cfg.declare("checkpoint", "", "checkpoint file");
  cfg.declare("cache", "", "prepared dataset cache directory");
  cfg.declare("split", "test", "valid|test");
  cfg.declare("tie", "mean", "mean|best|worst");
  cfg.declare("threads", "0", "worker threads; 0 = hardware");
  cfg.declare("out", "", "optional JSON report path");
  cfg.apply_flags(args);
  detail_cli::require(cfg, "checkpoint");
  detail_cli::require(cfg, "cache");
  detail_cli::require_exists(cfg.get_string("checkpoint"), "checkpoint");
  detail_cli::require_exists(cfg.get_string("cache") + "/triples.bin",
                             "dataset cache");

  const Checkpoint cp = load_checkpoint(cfg.get_string("checkpoint"));
  const Dataset ds = read_cache(cfg.get_string("cache"));
  const PreparedData data = prepare_for_training(ds);
  verify_checkpoint_shape(cp, data.n_entities, data.n_relations_aug,
                          cp.config.model.dim);
  const std::string split = cfg.get_string("split");
  const TripleSet* s = nullptr;
  if (split == "valid") s = &data.valid;
  else if (split == "test") s = &data.test;
  else throw ConfigError("split must be valid|test, got: " + split);

  ThreadPool pool(detail_cli::resolve_threads(
      static_cast<int>(cfg.get_long("threads"))));
  const TieConvention tie = tie_from_string(cfg.get_string("tie"));
  const Objective obj = cp.config.objective();
  EvalReport rep = evaluate_split(cp.params, obj.model, obj.activation, *s,
                                  data.filter, &pool, tie);
  const nlohmann::json j = detail_cli::report_json(rep, split, tie);
  std::cout << j.dump(2) << "\n";
  if (!cfg.get_string("out").empty())
    detail_cli::write_text_file(cfg.get_string("out"), j.dump(2) + "\n");
  return 0;
}

// Maps a benchmark variant token onto the config tweaks it implies: loss
// names race training strategies (canonical setup: hale runs the full
// hardness-aware mechanism with hanon, baselines run plain scores with the
// identity activation and c_r frozen); activation names race activations
// under the hale loss.
inline void apply_variant(TrainConfig& tc, const std::string& token) {
  static const char* losses[] = {"hale", "samneg", "advneg", "allneg", "nonneg"};
  for (const char* l : losses) {
    if (token == l) {
      tc.loss.kind = loss_from_string(token);
      const bool hale = tc.loss.kind == LossKind::HaLE;
      tc.activation.kind = hale ? Activation::Hanon : Activation::Identity;
      tc.activation.beta = default_beta(tc.activation.kind);
      tc.ablation.use_rel_ratio = hale;
      return;
    }
  }
  tc.loss.kind = LossKind::HaLE;
  tc.activation.kind = activation_from_string(token);  // throws if unknown
  tc.activation.beta = default_beta(tc.activation.kind);
}

inline int cmd_benchmark(const std::vector<std::string>& args) {
  KeyValueConfig cfg = detail_cli::resolve_run_config(args);
  detail_cli::require(cfg, "cache");
  detail_cli::require(cfg, "out-dir");
  detail_cli::require_exists(cfg.get_string("cache") + "/triples.bin",
                             "dataset cache");
  const auto variants = detail_cli::split_csv(cfg.get_string("variants"));
  if (variants.size() < 2)
    throw ConfigError("benchmark needs at least two variants (got " +
                      std::to_string(variants.size()) + ")");
  const std::string out_dir = cfg.get_string("out-dir");
  std::filesystem::create_directories(out_dir);
  const TrainConfig shared = make_train_config(cfg);
  const int threads = detail_cli::resolve_threads(shared.threads);
  const nlohmann::json manifest =
      make_run_manifest("benchmark", cfg, cfg.get_string("cache"), threads);
  detail_cli::write_text_file(out_dir + "/manifest.json",
                              manifest.dump(2) + "\n");

  const Dataset ds = read_cache(cfg.get_string("cache"));
  const PreparedData data = prepare_for_training(ds);
  ThreadPool pool(threads);

  std::ofstream curves(out_dir + "/benchmark.csv", std::ios::trunc);
  if (!curves) throw Error("cannot write " + out_dir + "/benchmark.csv");
  curves << "variant,elapsed_s,hits10,mrr\n";
  std::ofstream summary(out_dir + "/summary.csv", std::ios::trunc);
  summary << "variant,status,best_mrr,best_hits10,final_mrr,final_hits10,"
             "epochs,steps\n";

  struct VariantOutcome {
    bool ok = false;
    std::string error;
    TrainResult res;
  };
  std::vector<VariantOutcome> outcomes(variants.size());

  auto run_one = [&](std::size_t vi, ThreadPool& vpool) {
    VariantOutcome& out = outcomes[vi];
    TrainConfig tc = shared;
    try {
      apply_variant(tc, variants[vi]);
      tc.validate();
      out.res = train(tc, data, vpool, nullptr, nullptr);
      out.ok = true;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  };

  const bool parallel = cfg.get_bool("parallel");
  if (parallel) {
    // One single-worker pool per variant, all at once. Wall clocks then
    // overlap, so per-variant timings are not comparable across variants.
    std::cerr << "benchmark: parallel mode, timings are not comparable "
                 "between variants\n";
    std::vector<std::thread> runners;
    std::vector<std::unique_ptr<ThreadPool>> pools;
    for (std::size_t vi = 0; vi < variants.size(); ++vi)
      pools.push_back(std::make_unique<ThreadPool>(1));
    for (std::size_t vi = 0; vi < variants.size(); ++vi)
      runners.emplace_back([&, vi] { run_one(vi, *pools[vi]); });
    for (auto& t : runners) t.join();
  } else {
    // Sequential by default so wall clocks are comparable.
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      std::cerr << "benchmark: running variant " << variants[vi] << "\n";
      run_one(vi, pool);
    }
  }

  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    const std::string& v = variants[vi];
    const VariantOutcome& out = outcomes[vi];
    if (!out.ok) {
      std::cerr << "benchmark: variant " << v << " failed: " << out.error
                << "\n";
      summary << v << ",failed,,,,,,\n";
      continue;
    }
    double best_mrr = 0.0, best_h10 = 0.0;
    for (const auto& rec : out.res.log) {
      curves << v << ',' << rec.elapsed_s << ',' << rec.hits10 << ','
             << rec.mrr << "\n";
      best_mrr = std::max(best_mrr, rec.mrr);
      best_h10 = std::max(best_h10, rec.hits10);
    }
    const auto& last = out.res.log.back();
    summary << v << ",ok," << best_mrr << ',' << best_h10 << ',' << last.mrr
            << ',' << last.hits10 << ',' << out.res.epochs_completed << ','
            << out.res.steps << "\n";
  }
  std::cout << "benchmark complete: " << out_dir << "/benchmark.csv\n";
  return 0;
}

inline int cmd_export(const std::vector<std::string>& args) {
  KeyValueConfig cfg;
  cfg.declare("checkpoint", "", "checkpoint file");
  cfg.declare("cache", "", "prepared dataset cache (entity names)");
  cfg.declare("out", "", "output TSV path");
  cfg.apply_flags(args);
  detail_cli::require(cfg, "checkpoint");
  detail_cli::require(cfg, "cache");
  detail_cli::require(cfg, "out");
  detail_cli::require_exists(cfg.get_string("checkpoint"), "checkpoint");
  detail_cli::require_exists(cfg.get_string("cache") + "/triples.bin",
                             "dataset cache");

  const Checkpoint cp = load_checkpoint(cfg.get_string("checkpoint"));
  const Dataset ds = read_cache(cfg.get_string("cache"));
  const PreparedData meta = prepare_for_training(ds);
  verify_checkpoint_shape(cp, meta.n_entities, meta.n_relations_aug,
                          cp.config.model.dim);

  std::ofstream out(cfg.get_string("out"), std::ios::trunc);
  if (!out) throw Error("cannot write " + cfg.get_string("out"));
  out << "entity";
  for (int j = 0; j < cp.params.dim; ++j) out << "\te" << j;
  out << "\n";
  char num[32];
  for (std::int32_t i = 0; i < cp.params.n_entities; ++i) {
    out << ds.vocab.id_to_entity[i];
    const auto row = cp.params.entity_row(i);
    for (int j = 0; j < cp.params.dim; ++j) {
      std::snprintf(num, sizeof num, "%.17g", row[j]);
      out << '\t' << num;
    }
    out << "\n";
  }
  if (!out) throw Error("short write: " + cfg.get_string("out"));
  return 0;
}

// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
inline int dispatch(const std::vector<std::string>& args) {
  try {
    if (args.empty() || args[0] == "--help" || args[0] == "-h" ||
        args[0] == "help") {
      print_usage(args.empty() ? std::cerr : std::cout);
      return args.empty() ? 2 : 0;
    }
    const std::string cmd = args[0];
    const std::vector<std::string> rest(args.begin() + 1, args.end());
    if (cmd == "prepare") return cmd_prepare(rest);
    if (cmd == "train") return cmd_train(rest);
    if (cmd == "eval") return cmd_eval(rest);
    if (cmd == "benchmark") return cmd_benchmark(rest);
    if (cmd == "export") return cmd_export(rest);
    std::cerr << "unknown command: " << cmd << "\n";
    print_usage(std::cerr);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace hale::cli
