#pragma once

#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hale/common.hpp"
#include "hale/trainer.hpp"

namespace hale {

inline constexpr const char* kVersion = "0.1.0";

// Flat key=value configuration. Keys live in a fixed schema; a config file
// and --key value flags both feed the same registry, and any key outside the
// schema is fatal — a silently ignored typo would invalidate a grid search.
class KeyValueConfig {
 public:
  void declare(const std::string& key, const std::string& default_value,
               const std::string& help) {
    order_.push_back(key);
    values_[key] = default_value;
    help_[key] = help;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    it->second = value;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
  }

  std::string get_string(const std::string& key) const { return get(key); }

  double get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': not a number: " + v);
    }
  }

  long get_long(const std::string& key) const {
    const std::string& v = get(key);
    try {
      std::size_t pos = 0;
      const long x = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': not an integer: " + v);
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': not a boolean: " + v);
  }

  // Lines of `key = value`, '#' comments, blank lines allowed.
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t");
        return s.substr(b, e - b + 1);
      };
      const std::string stripped = trim(line);
      if (stripped.empty()) continue;
      const std::size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) +
                          ": expected key = value");
      const std::string key = trim(stripped.substr(0, eq));
      const std::string value = trim(stripped.substr(eq + 1));
      set(key, value);
    }
  }

  // --key value (or --key=value) pairs; every schema key is a valid flag.
  void apply_flags(const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
      const std::string& a = args[i];
      if (a.rfind("--", 0) != 0)
        throw ConfigError("expected --key value, got: " + a);
      std::string key = a.substr(2);
      const std::size_t eq = key.find('=');
      if (eq != std::string::npos) {
        set(key.substr(0, eq), key.substr(eq + 1));
        continue;
      }
      if (i + 1 >= args.size())
        throw ConfigError("flag --" + key + " is missing a value");
      set(key, args[++i]);
    }
  }

  // Every key with its resolved value, in declaration order.
  nlohmann::json resolved() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : order_) j[k] = values_.at(k);
    return j;
  }

  const std::vector<std::string>& keys() const { return order_; }
  const std::string& help(const std::string& key) const {
    return help_.at(key);
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> help_;
};

// Schema shared by train / eval / benchmark. `auto` defaults resolve against
// the selected loss: hale pairs with hanon, the baselines with identity.
inline KeyValueConfig run_config_schema() {
  KeyValueConfig c;
  c.declare("cache", "", "prepared dataset cache directory");
  c.declare("out-dir", "", "artifact output directory");
  c.declare("model", "rote", "transe|distmult|rotate|rote|rotl");
  c.declare("dim", "32", "embedding dimension");
  c.declare("loss", "hale", "hale|samneg|advneg|allneg|nonneg");
  c.declare("activation", "auto",
            "identity|linear2x|xexpx|arctanh2|hanon|halin|auto");
  c.declare("beta", "auto", "activation soft-constraint slope");
  c.declare("gamma", "10", "activation hard cap");
  c.declare("lambda", "0.5", "alignment weight (hale)");
  c.declare("alpha", "0.1", "query sampling proportion (hale)");
  c.declare("neg-count", "50", "negatives per positive (samneg/advneg)");
  c.declare("margin", "2", "margin offset (samneg/advneg)");
  c.declare("adv-temperature", "1", "self-adversarial temperature (advneg)");
  c.declare("reg-weight", "1", "spread regularizer weight mu (nonneg)");
  c.declare("reg-radius", "1", "spread target radius rho (nonneg)");
  c.declare("lr", "0.001", "learning rate");
  c.declare("batch-size", "512", "triples per step");
  c.declare("max-seconds", "-1", "wall budget; <=0 unbounded");
  c.declare("max-epochs", "-1", "epoch budget; <0 unbounded");
  c.declare("eval-interval-seconds", "10", "snapshot cadence (wall mode)");
  c.declare("snapshot-every-epochs", "1", "snapshot cadence (deterministic)");
  c.declare("snapshot-sample", "500", "validation queries per snapshot; 0=all");
  c.declare("seed", "42", "master seed");
  c.declare("optimizer", "adam", "adam|sgd");
  c.declare("threads", "0", "worker threads; 0 = hardware");
  c.declare("deterministic", "false", "deterministic-reduction mode");
  c.declare("use-activation", "true", "off: force identity activation");
  c.declare("pos-square", "true", "square the positive alignment term");
  c.declare("rel-ratio", "true", "trainable c_r");
  c.declare("tie", "mean", "rank tie convention: mean|best|worst");
  c.declare("variants", "", "benchmark variant list, comma separated");
  c.declare("parallel", "false",
            "benchmark: one worker per variant, concurrently (timings "
            "become incomparable)");
  return c;
}

inline TrainConfig make_train_config(const KeyValueConfig& c) {
  TrainConfig t;
  t.model.kind = model_from_string(c.get_string("model"));
  t.model.dim = static_cast<int>(c.get_long("dim"));
  t.loss.kind = loss_from_string(c.get_string("loss"));
  const std::string act = c.get_string("activation");
  if (act == "auto") {
    t.activation.kind = t.loss.kind == LossKind::HaLE ? Activation::Hanon
                                                      : Activation::Identity;
  } else {
    t.activation.kind = activation_from_string(act);
  }
  const std::string beta = c.get_string("beta");
  t.activation.beta =
      beta == "auto" ? default_beta(t.activation.kind) : c.get_double("beta");
  t.activation.gamma = c.get_double("gamma");
  t.loss.lambda = c.get_double("lambda");
  t.loss.sample_alpha = c.get_double("alpha");
  t.loss.neg_count = static_cast<int>(c.get_long("neg-count"));
  t.loss.margin = c.get_double("margin");
  t.loss.adv_temperature = c.get_double("adv-temperature");
  t.loss.reg_weight = c.get_double("reg-weight");
  t.loss.reg_radius = c.get_double("reg-radius");
  t.learning_rate = c.get_double("lr");
  t.batch_size = static_cast<int>(c.get_long("batch-size"));
  t.max_seconds = c.get_double("max-seconds");
  t.max_epochs = c.get_long("max-epochs");
  t.eval_interval_seconds = c.get_double("eval-interval-seconds");
  t.snapshot_every_epochs = c.get_long("snapshot-every-epochs");
  t.snapshot_sample = static_cast<int>(c.get_long("snapshot-sample"));
  t.seed = static_cast<std::uint64_t>(c.get_long("seed"));
  t.optimizer = optimizer_from_string(c.get_string("optimizer"));
  t.threads = static_cast<int>(c.get_long("threads"));
  t.deterministic = c.get_bool("deterministic");
  t.ablation.use_activation = c.get_bool("use-activation");
  t.ablation.use_pos_square = c.get_bool("pos-square");
  t.ablation.use_rel_ratio = c.get_bool("rel-ratio");
  t.loss.pos_square = t.ablation.use_pos_square;
  return t;
}

inline std::uint64_t file_fingerprint(const std::string& path) {
  const auto buf = detail::read_file(path);
  return fnv1a64(buf.data(), buf.size());
}

inline std::string hex64(std::uint64_t v) {
  char out[17];
  std::snprintf(out, sizeof out, "%016llx",
                static_cast<unsigned long long>(v));
  return out;
}

// Written before training starts: resolved config, data fingerprints, seed,
// version, timestamp — enough to reproduce the run.
inline nlohmann::json make_run_manifest(const std::string& command,
                                        const KeyValueConfig& cfg,
                                        const std::string& cache_dir,
                                        int threads_resolved) {
  nlohmann::json m;
  m["version"] = kVersion;
  m["command"] = command;
  m["seed"] = cfg.get_long("seed");
  m["threads_resolved"] = threads_resolved;
  m["clock"] = cfg.get_bool("deterministic") ? "epochs" : "wall";
  {
    std::time_t now = std::time(nullptr);
    char ts[32];
    std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    m["start_time"] = ts;
  }
  m["config"] = cfg.resolved();
  nlohmann::json fp = nlohmann::json::object();
  for (const char* f : {"triples.bin", "vocab.json"}) {
    const std::string p = cache_dir + "/" + f;
    fp[f] = hex64(file_fingerprint(p));
  }
  m["dataset_fingerprint"] = fp;
  return m;
}

}  // namespace hale
