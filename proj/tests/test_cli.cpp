#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "hale/cli.hpp"
#include "testutil.hpp"

using namespace hale;
using testutil::TempDir;
using testutil::Tsv;

namespace {

// A small but non-trivial synthetic dataset directory.
void write_toy_dataset(const std::string& dir) {
  Rng rng(12);
  Tsv train, valid, test;
  // a ring plus random chords over 12 entities, 2 relations
  for (int i = 0; i < 12; ++i) {
    train.row("e" + std::to_string(i), "next",
              "e" + std::to_string((i + 1) % 12));
  }
  for (int i = 0; i < 20; ++i) {
    train.row("e" + std::to_string(rng.below(12)), "chord",
              "e" + std::to_string(rng.below(12)));
  }
  valid.row("e0", "next", "e1").row("e3", "chord", "e7");
  test.row("e5", "next", "e6").row("e2", "chord", "e9");
  testutil::write_text(dir + "/train.txt", train.body);
  testutil::write_text(dir + "/valid.txt", valid.body);
  testutil::write_text(dir + "/test.txt", test.body);
}

int run(std::vector<std::string> args) { return hale::cli::dispatch(args); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("prepare writes a cache and reports stats; errors use exit 2") {
  TempDir src, cache;
  write_toy_dataset(src.path());
  CHECK(run({"prepare", "--dataset-dir", src.path(), "--out-dir",
             cache.path()}) == 0);
  CHECK(std::filesystem::exists(cache.file("triples.bin")));
  CHECK(std::filesystem::exists(cache.file("vocab.json")));
  CHECK(std::filesystem::exists(cache.file("stats.json")));

  // rerun on unchanged input: identical cache bytes
  TempDir cache2;
  CHECK(run({"prepare", "--dataset-dir", src.path(), "--out-dir",
             cache2.path()}) == 0);
  CHECK(slurp(cache.file("triples.bin")) == slurp(cache2.file("triples.bin")));

  // missing valid.txt is a usage error naming the file
  TempDir broken;
  testutil::write_text(broken.file("train.txt"), "a\tr\tb\n");
  testutil::write_text(broken.file("test.txt"), "a\tr\tb\n");
  CHECK(run({"prepare", "--dataset-dir", broken.path(), "--out-dir",
             cache.path()}) == 2);
}

TEST_CASE("unknown config keys and commands are fatal usage errors") {
  CHECK(run({"train", "--no-such-key", "1"}) == 2);
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({}) == 2);
  CHECK(run({"--help"}) == 0);
  CHECK(run({"train", "--cache"}) == 2);  // missing value
}

TEST_CASE("HALE_THREADS fills in the auto worker count") {
  setenv("HALE_THREADS", "3", 1);
  CHECK(hale::cli::detail_cli::resolve_threads(0) == 3);
  CHECK(hale::cli::detail_cli::resolve_threads(2) == 2);  // explicit wins
  unsetenv("HALE_THREADS");
  CHECK(hale::cli::detail_cli::resolve_threads(0) >= 1);
}

TEST_CASE("train/eval/export round trip on a toy cache") {
  TempDir src, cache, out;
  write_toy_dataset(src.path());
  REQUIRE(run({"prepare", "--dataset-dir", src.path(), "--out-dir",
               cache.path()}) == 0);

  REQUIRE(run({"train", "--cache", cache.path(), "--out-dir", out.path(),
               "--model", "rote", "--dim", "8", "--loss", "hale",
               "--max-epochs", "40", "--deterministic", "true",
               "--snapshot-every-epochs", "10", "--snapshot-sample", "0",
               "--batch-size", "16", "--lr", "0.05", "--alpha", "0.5",
               "--threads", "1"}) == 0);

  CHECK(std::filesystem::exists(out.file("manifest.json")));
  CHECK(std::filesystem::exists(out.file("best.ckpt")));
  CHECK(std::filesystem::exists(out.file("metrics.jsonl")));
  CHECK(std::filesystem::exists(out.file("test_metrics.json")));

  // manifest echoes the resolved config values we passed
  const auto manifest = nlohmann::json::parse(slurp(out.file("manifest.json")));
  CHECK(manifest["config"]["model"] == "rote");
  CHECK(manifest["config"]["dim"] == "8");
  CHECK(manifest["config"]["alpha"] == "0.5");
  CHECK(manifest["config"]["activation"] == "auto");
  CHECK(manifest["clock"] == "epochs");
  CHECK(manifest["dataset_fingerprint"].contains("triples.bin"));

  // metrics stream is valid JSONL with strictly increasing elapsed_s
  std::istringstream metrics(slurp(out.file("metrics.jsonl")));
  std::string line;
  double prev = -1.0;
  std::size_t lines = 0;
  while (std::getline(metrics, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["elapsed_s"].get<double>() > prev);
    prev = j["elapsed_s"].get<double>();
    for (const char* k : {"epoch", "mrr", "hits1", "hits3", "hits10"})
      CHECK(j.contains(k));
    ++lines;
  }
  CHECK(lines >= 4);

  CHECK(run({"eval", "--checkpoint", out.file("best.ckpt"), "--cache",
             cache.path(), "--split", "valid", "--threads", "1"}) == 0);

  const std::string tsv = out.file("emb.tsv");
  CHECK(run({"export", "--checkpoint", out.file("best.ckpt"), "--cache",
             cache.path(), "--out", tsv}) == 0);

  // header + one row per entity, each with 1 + dim columns; values match the
  // checkpoint to full precision
  const Checkpoint cp = load_checkpoint(out.file("best.ckpt"));
  std::istringstream emb(slurp(tsv));
  std::getline(emb, line);
  CHECK(line.substr(0, 6) == "entity");
  std::size_t rows = 0;
  while (std::getline(emb, line)) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    REQUIRE(cols.size() == 1 + 8);
    for (int j = 0; j < 8; ++j) {
      const double v = std::stod(cols[j + 1]);
      CHECK(v == doctest::Approx(cp.params.entity_row(static_cast<std::int32_t>(rows))[j])
                     .epsilon(1e-12));
    }
    ++rows;
  }
  CHECK(rows == cp.params.n_entities);

  // nonexistent checkpoint: exit 2 (missing file is a usage error)
  CHECK(run({"export", "--checkpoint", out.file("nope.ckpt"), "--cache",
             cache.path(), "--out", tsv}) == 2);
  CHECK(run({"eval", "--checkpoint", out.file("nope.ckpt"), "--cache",
             cache.path()}) == 2);
}

TEST_CASE("deterministic train runs are byte-identical") {
  TempDir src, cache, out1, out2;
  write_toy_dataset(src.path());
  REQUIRE(run({"prepare", "--dataset-dir", src.path(), "--out-dir",
               cache.path()}) == 0);
  const std::vector<std::string> common{
      "--cache",       cache.path(),  "--model",     "rotl",
      "--dim",         "4",           "--loss",      "hale",
      "--max-epochs",  "30",          "--deterministic", "true",
      "--snapshot-every-epochs", "5", "--snapshot-sample", "0",
      "--batch-size",  "8",           "--lr",        "0.02",
      "--threads",     "2",           "--seed",      "7"};
  auto args1 = common;
  args1.insert(args1.begin(), "train");
  args1.push_back("--out-dir");
  args1.push_back(out1.path());
  auto args2 = common;
  args2.insert(args2.begin(), "train");
  args2.push_back("--out-dir");
  args2.push_back(out2.path());
  REQUIRE(run(args1) == 0);
  REQUIRE(run(args2) == 0);
  CHECK(slurp(out1.file("metrics.jsonl")) == slurp(out2.file("metrics.jsonl")));
  CHECK(slurp(out1.file("best.ckpt")) == slurp(out2.file("best.ckpt")));
}

TEST_CASE("config file keys merge with flag overrides") {
  TempDir src, cache, out;
  write_toy_dataset(src.path());
  REQUIRE(run({"prepare", "--dataset-dir", src.path(), "--out-dir",
               cache.path()}) == 0);
  const std::string cfg_path = out.file("run.cfg");
  testutil::write_text(cfg_path,
                       "# toy run\n"
                       "model = transe\n"
                       "dim = 4\n"
                       "max-epochs = 5\n"
                       "deterministic = true\n"
                       "snapshot-sample = 0\n"
                       "threads = 1\n"
                       "lambda = 0.3   # inline comment\n");
  REQUIRE(run({"train", "--config", cfg_path, "--cache", cache.path(),
               "--out-dir", out.path(), "--dim", "8"}) == 0);
  const auto manifest = nlohmann::json::parse(slurp(out.file("manifest.json")));
  CHECK(manifest["config"]["model"] == "transe");
  CHECK(manifest["config"]["dim"] == "8");  // flag overrides file
  CHECK(manifest["config"]["lambda"] == "0.3");

  // bad config file key
  testutil::write_text(cfg_path, "no-such = 1\n");
  CHECK(run({"train", "--config", cfg_path, "--cache", cache.path(),
             "--out-dir", out.path()}) == 2);
}

TEST_CASE("benchmark races variants and writes curves plus summary") {
  TempDir src, cache, out;
  write_toy_dataset(src.path());
  REQUIRE(run({"prepare", "--dataset-dir", src.path(), "--out-dir",
               cache.path()}) == 0);

  CHECK(run({"benchmark", "--cache", cache.path(), "--out-dir", out.path(),
             "--variants", "hale"}) == 2);  // needs at least two

  REQUIRE(run({"benchmark", "--cache", cache.path(), "--out-dir", out.path(),
               "--variants", "hale,samneg,nonneg", "--dim", "4",
               "--max-epochs", "10", "--deterministic", "true",
               "--snapshot-every-epochs", "2", "--snapshot-sample", "0",
               "--batch-size", "8", "--threads", "1"}) == 0);

  const std::string curves = slurp(out.file("benchmark.csv"));
  CHECK(curves.rfind("variant,elapsed_s,hits10,mrr\n", 0) == 0);
  for (const char* v : {"\nhale,", "\nsamneg,", "\nnonneg,"})
    CHECK(curves.find(v) != std::string::npos);

  const std::string summary = slurp(out.file("summary.csv"));
  CHECK(summary.find("hale,ok") != std::string::npos);
  CHECK(summary.find("samneg,ok") != std::string::npos);

  // activation-variant tokens race under the hale loss
  TempDir out2;
  REQUIRE(run({"benchmark", "--cache", cache.path(), "--out-dir", out2.path(),
               "--variants", "hanon,linear2x", "--dim", "4", "--max-epochs",
               "4", "--deterministic", "true", "--snapshot-every-epochs", "2",
               "--snapshot-sample", "0", "--threads", "1"}) == 0);
  const std::string curves2 = slurp(out2.file("benchmark.csv"));
  CHECK(curves2.find("\nhanon,") != std::string::npos);
  CHECK(curves2.find("\nlinear2x,") != std::string::npos);

  // unknown variant token is recorded as failed, the rest continue
  TempDir out3;
  REQUIRE(run({"benchmark", "--cache", cache.path(), "--out-dir", out3.path(),
               "--variants", "hale,bogus", "--dim", "4", "--max-epochs", "2",
               "--deterministic", "true", "--snapshot-sample", "0",
               "--threads", "1"}) == 0);
  CHECK(slurp(out3.file("summary.csv")).find("bogus,failed") !=
        std::string::npos);

  // opt-in parallel mode produces the same set of curves
  TempDir out4;
  REQUIRE(run({"benchmark", "--cache", cache.path(), "--out-dir", out4.path(),
               "--variants", "hale,samneg", "--parallel", "true", "--dim",
               "4", "--max-epochs", "4", "--deterministic", "true",
               "--snapshot-every-epochs", "2", "--snapshot-sample", "0",
               "--threads", "1"}) == 0);
  const std::string curves4 = slurp(out4.file("benchmark.csv"));
  CHECK(curves4.find("\nhale,") != std::string::npos);
  CHECK(curves4.find("\nsamneg,") != std::string::npos);
}

TEST_CASE("prepare on the real codex-s reproduces the published stats" *
          doctest::skip(!testutil::has_dataset("codex-s"))) {
  TempDir cache;
  REQUIRE(run({"prepare", "--dataset-dir",
               testutil::dataset_dir() + "/codex-s", "--out-dir",
               cache.path()}) == 0);
  const auto stats = nlohmann::json::parse(slurp(cache.file("stats.json")));
  CHECK(stats["n_entities"] == 2034);
  CHECK(stats["n_relations"] == 42);
  CHECK(stats["train"] == 32888);
}
