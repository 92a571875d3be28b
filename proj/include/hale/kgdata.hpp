#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hale/common.hpp"

namespace hale {

struct RawTriple {
  std::string head, rel, tail;
};

using RawTriples = std::vector<RawTriple>;

// Reads a UTF-8 TSV with one triple per line (head<TAB>relation<TAB>tail).
// Order preserved, no deduplication. A line with anything other than exactly
// two tab separators is a hard error naming the 1-based line number.
inline RawTriples load_raw_triples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open triple file: " + path);
  RawTriples out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t t1 = line.find('\t');
    const std::size_t t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos ||
        line.find('\t', t2 + 1) != std::string::npos) {
      throw Error(path + ":" + std::to_string(lineno) +
                  ": malformed line (expected 3 tab-separated fields)");
    }
    out.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1),
                   line.substr(t2 + 1)});
  }
  return out;
}

// Dense string<->id maps for entities and relations. Ids are assigned by
// first appearance, so ingestion is single-pass and deterministic.
struct Vocabulary {
  std::unordered_map<std::string, std::int32_t> entity_to_id;
  std::vector<std::string> id_to_entity;
  std::unordered_map<std::string, std::int32_t> relation_to_id;
  std::vector<std::string> id_to_relation;

  std::int32_t entity_count() const {
    return static_cast<std::int32_t>(id_to_entity.size());
  }
  std::int32_t relation_count() const {
    return static_cast<std::int32_t>(id_to_relation.size());
  }

  std::int32_t add_entity(const std::string& s) {
    auto [it, inserted] = entity_to_id.try_emplace(s, entity_count());
    if (inserted) id_to_entity.push_back(s);
    return it->second;
  }

  std::int32_t add_relation(const std::string& s) {
    auto [it, inserted] = relation_to_id.try_emplace(s, relation_count());
    if (inserted) id_to_relation.push_back(s);
    return it->second;
  }

  std::int32_t entity_id(const std::string& s) const {
    auto it = entity_to_id.find(s);
    if (it == entity_to_id.end())
      throw Error("out-of-vocabulary entity: \"" + s + "\"");
    return it->second;
  }

  std::int32_t relation_id(const std::string& s) const {
    auto it = relation_to_id.find(s);
    if (it == relation_to_id.end())
      throw Error("out-of-vocabulary relation: \"" + s + "\"");
    return it->second;
  }

  // Folds more raw triples into the maps (used to extend the training
  // vocabulary with valid/test entities; see load_dataset_dir).
  void absorb(const RawTriples& raw) {
    for (const auto& t : raw) {
      add_entity(t.head);
      add_relation(t.rel);
      add_entity(t.tail);
    }
  }
};

inline Vocabulary build_vocabulary(const RawTriples& train_raw) {
  if (train_raw.empty())
    throw Error("build_vocabulary: empty training triples");
  Vocabulary v;
  v.absorb(train_raw);
  return v;
}

// Integer-encoded facts for one split, structure-of-arrays.
struct TripleSet {
  std::vector<std::int32_t> heads, relations, tails;
  std::string name;

  std::size_t size() const { return heads.size(); }
  bool empty() const { return heads.empty(); }

  void push(std::int32_t h, std::int32_t r, std::int32_t t) {
    heads.push_back(h);
    relations.push_back(r);
    tails.push_back(t);
  }

  void reserve(std::size_t n) {
    heads.reserve(n);
    relations.reserve(n);
    tails.reserve(n);
  }
};

inline TripleSet encode_split(const RawTriples& raw, const Vocabulary& vocab,
                              std::string name = {}) {
  TripleSet out;
  out.name = std::move(name);
  out.reserve(raw.size());
  for (const auto& t : raw) {
    out.push(vocab.entity_id(t.head), vocab.relation_id(t.rel),
             vocab.entity_id(t.tail));
  }
  return out;
}

// Adds the inverse triple (t, r + n_relations, h) for every (h, r, t), so
// head prediction reduces to tail prediction under the inverse relation.
// Guards against double application: any relation id >= n_relations on input
// means the set is already augmented.
inline TripleSet augment_reciprocal(const TripleSet& t,
                                    std::int32_t n_relations) {
  for (std::int32_t r : t.relations) {
    if (r >= n_relations)
      throw Error("augment_reciprocal: relation id " + std::to_string(r) +
                  " >= " + std::to_string(n_relations) +
                  " (input already augmented?)");
  }
  TripleSet out;
  out.name = t.name;
  out.reserve(2 * t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    out.push(t.heads[i], t.relations[i], t.tails[i]);
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    out.push(t.tails[i], t.relations[i] + n_relations, t.heads[i]);
  }
  return out;
}

// Answer sets for the filtered evaluation protocol:
// answers[(e, r)] = { e' : (e, r, e') in train∪valid∪test }.
struct FilterIndex {
  std::unordered_map<std::uint64_t, std::vector<std::int32_t>> answers;

  static std::uint64_t key(std::int32_t e, std::int32_t r) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(e)) << 32) |
           static_cast<std::uint32_t>(r);
  }

  // Sorted, duplicate-free answer list; nullptr when the query is unknown.
  const std::vector<std::int32_t>* find(std::int32_t e, std::int32_t r) const {
    auto it = answers.find(key(e, r));
    return it == answers.end() ? nullptr : &it->second;
  }

  bool contains(std::int32_t e, std::int32_t r, std::int32_t t) const {
    const auto* v = find(e, r);
    return v && std::binary_search(v->begin(), v->end(), t);
  }

  std::size_t total_answers() const {
    std::size_t n = 0;
    for (const auto& [k, v] : answers) n += v.size();
    return n;
  }
};

inline FilterIndex build_filter_index(const TripleSet& train,
                                      const TripleSet& valid,
                                      const TripleSet& test) {
  FilterIndex idx;
  for (const TripleSet* s : {&train, &valid, &test}) {
    for (std::size_t i = 0; i < s->size(); ++i) {
      idx.answers[FilterIndex::key(s->heads[i], s->relations[i])].push_back(
          s->tails[i]);
    }
  }
  for (auto& [k, v] : idx.answers) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return idx;
}

}  // namespace hale
