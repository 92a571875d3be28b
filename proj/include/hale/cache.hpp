#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "hale/kgdata.hpp"

namespace hale {

// A dataset with raw (un-augmented) relation ids, closed over one vocabulary.
struct Dataset {
  Vocabulary vocab;
  TripleSet train, valid, test;

  std::int32_t n_entities() const { return vocab.entity_count(); }
  std::int32_t n_relations() const { return vocab.relation_count(); }
};

// Loads train.txt/valid.txt/test.txt from a directory. The vocabulary is
// built over all three splits (train scanned first, so training entities get
// the low ids); WN18RR's valid/test contain entities that never occur in
// train, and those must still be rankable candidates at evaluation time.
inline Dataset load_dataset_dir(const std::string& dir) {
  const std::string train_p = dir + "/train.txt";
  const std::string valid_p = dir + "/valid.txt";
  const std::string test_p = dir + "/test.txt";
  for (const auto& p : {train_p, valid_p, test_p}) {
    if (!std::filesystem::exists(p)) throw Error("missing split file: " + p);
  }
  const RawTriples train_raw = load_raw_triples(train_p);
  const RawTriples valid_raw = load_raw_triples(valid_p);
  const RawTriples test_raw = load_raw_triples(test_p);

  Dataset ds;
  ds.vocab = build_vocabulary(train_raw);
  ds.vocab.absorb(valid_raw);
  ds.vocab.absorb(test_raw);
  ds.train = encode_split(train_raw, ds.vocab, "train");
  ds.valid = encode_split(valid_raw, ds.vocab, "valid");
  ds.test = encode_split(test_raw, ds.vocab, "test");
  return ds;
}

// ---- binary cache ------------------------------------------------------------
//
// triples.bin: "HALE" magic, u32 format version, u32 n_E, u32 n_R,
//              u32 counts[3], then per split the h/r/t arrays as LE u32.
// vocab.json:  {"entities": [...], "relations": [...]} in id order.
// stats.json:  summary counts.

inline constexpr std::uint32_t kCacheVersion = 1;

namespace detail {

inline void put_id_array(std::vector<unsigned char>& buf,
                         const std::vector<std::int32_t>& v) {
  for (std::int32_t x : v) put_u32(buf, static_cast<std::uint32_t>(x));
}

inline void write_file(const std::string& path, const void* data,
                       std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw Error("short write: " + path);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open file: " + path);
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<unsigned char> buf(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(size));
  if (!in) throw Error("short read: " + path);
  return buf;
}

}  // namespace detail

inline void write_cache(const std::string& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);

  std::vector<unsigned char> buf;
  buf.insert(buf.end(), {'H', 'A', 'L', 'E'});
  put_u32(buf, kCacheVersion);
  put_u32(buf, static_cast<std::uint32_t>(ds.n_entities()));
  put_u32(buf, static_cast<std::uint32_t>(ds.n_relations()));
  for (const TripleSet* s : {&ds.train, &ds.valid, &ds.test}) {
    put_u32(buf, static_cast<std::uint32_t>(s->size()));
  }
  for (const TripleSet* s : {&ds.train, &ds.valid, &ds.test}) {
    detail::put_id_array(buf, s->heads);
    detail::put_id_array(buf, s->relations);
    detail::put_id_array(buf, s->tails);
  }
  detail::write_file(dir + "/triples.bin", buf.data(), buf.size());

  nlohmann::json vocab;
  vocab["entities"] = ds.vocab.id_to_entity;
  vocab["relations"] = ds.vocab.id_to_relation;
  const std::string vs = vocab.dump();
  detail::write_file(dir + "/vocab.json", vs.data(), vs.size());

  nlohmann::json stats;
  stats["n_entities"] = ds.n_entities();
  stats["n_relations"] = ds.n_relations();
  stats["train"] = ds.train.size();
  stats["valid"] = ds.valid.size();
  stats["test"] = ds.test.size();
  const std::string ss = stats.dump(2) + "\n";
  detail::write_file(dir + "/stats.json", ss.data(), ss.size());
}

inline Dataset read_cache(const std::string& dir) {
  const auto buf = detail::read_file(dir + "/triples.bin");
  ByteReader r(buf.data(), buf.size());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "HALE", 4) != 0)
    throw Error("bad cache magic in " + dir + "/triples.bin");
  const std::uint32_t version = r.u32();
  if (version != kCacheVersion)
    throw Error("unsupported cache version " + std::to_string(version));
  const auto n_e = static_cast<std::int32_t>(r.u32());
  const auto n_r = static_cast<std::int32_t>(r.u32());
  std::uint32_t counts[3];
  for (auto& c : counts) c = r.u32();

  Dataset ds;
  const char* names[3] = {"train", "valid", "test"};
  TripleSet* splits[3] = {&ds.train, &ds.valid, &ds.test};
  for (int s = 0; s < 3; ++s) {
    splits[s]->name = names[s];
    splits[s]->reserve(counts[s]);
    std::vector<std::int32_t>* arrays[3] = {&splits[s]->heads,
                                            &splits[s]->relations,
                                            &splits[s]->tails};
    for (auto* arr : arrays) {
      arr->resize(counts[s]);
      for (std::uint32_t i = 0; i < counts[s]; ++i) {
        (*arr)[i] = static_cast<std::int32_t>(r.u32());
      }
    }
  }

  const auto vbuf = detail::read_file(dir + "/vocab.json");
  const auto vj = nlohmann::json::parse(vbuf.begin(), vbuf.end());
  ds.vocab.id_to_entity = vj.at("entities").get<std::vector<std::string>>();
  ds.vocab.id_to_relation = vj.at("relations").get<std::vector<std::string>>();
  if (static_cast<std::int32_t>(ds.vocab.id_to_entity.size()) != n_e ||
      static_cast<std::int32_t>(ds.vocab.id_to_relation.size()) != n_r) {
    throw Error("vocab.json does not match triples.bin header in " + dir);
  }
  for (std::int32_t i = 0; i < n_e; ++i)
    ds.vocab.entity_to_id.emplace(ds.vocab.id_to_entity[i], i);
  for (std::int32_t i = 0; i < n_r; ++i)
    ds.vocab.relation_to_id.emplace(ds.vocab.id_to_relation[i], i);
  return ds;
}

// Augmented splits plus the filtered-evaluation index: everything the trainer
// and evaluator consume. Immutable after construction.
struct PreparedData {
  std::int32_t n_entities = 0;
  std::int32_t n_relations_raw = 0;   // before reciprocal augmentation
  std::int32_t n_relations_aug = 0;   // 2 * raw
  TripleSet train, valid, test;       // augmented
  FilterIndex filter;
};

inline PreparedData prepare_for_training(const Dataset& ds) {
  PreparedData p;
  p.n_entities = ds.n_entities();
  p.n_relations_raw = ds.n_relations();
  p.n_relations_aug = 2 * p.n_relations_raw;
  p.train = augment_reciprocal(ds.train, p.n_relations_raw);
  p.valid = augment_reciprocal(ds.valid, p.n_relations_raw);
  p.test = augment_reciprocal(ds.test, p.n_relations_raw);
  p.filter = build_filter_index(p.train, p.valid, p.test);
  return p;
}

}  // namespace hale
