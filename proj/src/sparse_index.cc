// Copyright 2026 The KGI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kgi/sparse_index.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"
#include "kgi/common.h"

namespace kgi {

namespace {

std::vector<std::string> unique_terms(const std::string &text) {
  std::vector<std::string> out;
  for (auto &w : split_words(text)) {
    if (w == "[sep]") continue;
    if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(std::move(w));
  }
  return out;
}

double term_weight(double idf, int tf, double k1, double b, int len, double avglen) {
  const double norm = k1 * (1.0 - b + b * static_cast<double>(len) / avglen);
  return idf * tf * (k1 + 1.0) / (tf + norm);
}

}  // namespace

Bm25Index::Bm25Index(const std::vector<Passage> &passages, Bm25Params params)
    : params_(params) {
  require(!passages.empty(), "BM25 index over an empty corpus");
  require(params.k1 >= 0.0, "BM25 k1 must be >= 0");
  require(params.b >= 0.0 && params.b <= 1.0, "BM25 b must be in [0, 1]");
  long total = 0;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    ids_.push_back(passages[i].passage_id);
    std::map<std::string, int> tf;
    int len = 0;
    for (auto &w : split_words(passage_encoder_text(passages[i]))) {
      ++tf[w];
      ++len;
    }
    lengths_.push_back(len);
    total += len;
    for (auto &[term, count] : tf) postings_[term].push_back({i, count});
  }
  avg_length_ = static_cast<double>(total) / static_cast<double>(passages.size());
  if (avg_length_ == 0.0) avg_length_ = 1.0;
}

double Bm25Index::idf(const std::string &term) const {
  auto it = postings_.find(term);
  const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
  const double n = static_cast<double>(ids_.size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

const std::vector<Posting> *Bm25Index::postings(const std::string &term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? nullptr : &it->second;
}

double Bm25Index::score(const std::vector<std::string> &query_terms, std::size_t passage) const {
  double s = 0.0;
  std::vector<std::string> seen;
  for (const auto &t : query_terms) {
    if (t == "[sep]" || std::find(seen.begin(), seen.end(), t) != seen.end()) continue;
    seen.push_back(t);
    const auto *plist = postings(t);
    if (plist == nullptr) continue;
    auto it = std::find_if(plist->begin(), plist->end(),
                           [&](const Posting &p) { return p.passage == passage; });
    if (it == plist->end()) continue;
    s += term_weight(idf(t), it->tf, params_.k1, params_.b, lengths_[passage], avg_length_);
  }
  return s;
}

std::vector<RetrievalResult> Bm25Index::search(const std::string &query_text,
                                               std::size_t k) const {
  require(k >= 1, "bm25_search: k must be >= 1");
  std::vector<double> acc(ids_.size(), 0.0);
  std::vector<char> touched(ids_.size(), 0);
  for (const auto &t : unique_terms(query_text)) {
    const auto *plist = postings(t);
    if (plist == nullptr) continue;
    const double w = idf(t);
    for (const auto &p : *plist) {
      acc[p.passage] += term_weight(w, p.tf, params_.k1, params_.b, lengths_[p.passage],
                                    avg_length_);
      touched[p.passage] = 1;
    }
  }
  std::vector<RetrievalResult> results;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (touched[i]) results.push_back({i, ids_[i], acc[i]});
  }
  const std::size_t keep = std::min(k, results.size());
  std::partial_sort(results.begin(), results.begin() + static_cast<long>(keep), results.end(),
                    ranks_before);
  results.resize(keep);
  return results;
}

Bm25Index build_bm25_index(const std::vector<Passage> &passages, double k1, double b) {
  return Bm25Index(passages, {k1, b});
}

std::vector<RetrievalResult> bm25_search(const Bm25Index &index, const std::string &query_text,
                                         std::size_t k) {
  return index.search(query_text, k);
}

MiningReport &MiningReport::operator+=(const MiningReport &o) {
  mined += o.mined;
  dropped_gold_overlap += o.dropped_gold_overlap;
  dropped_answer += o.dropped_answer;
  dropped_exhausted += o.dropped_exhausted;
  return *this;
}

bool contains_answer(const Passage &p, const std::vector<std::string> &answers) {
  const std::string text = to_lower(p.text);
  for (const auto &a : answers) {
    const std::string alias = to_lower(a);
    if (!alias.empty() && text.find(alias) != std::string::npos) return true;
  }
  return false;
}

std::optional<std::size_t> first_valid_negative(const std::vector<RetrievalResult> &ranked,
                                                const std::vector<Passage> &passages,
                                                const SlotInstance &instance,
                                                MiningReport *report) {
  MiningReport local;
  std::optional<std::size_t> found;
  for (const auto &r : ranked) {
    const Passage &p = passages.at(r.index);
    if (overlaps(p, instance.provenance)) {
      ++local.dropped_gold_overlap;
      continue;
    }
    if (contains_answer(p, instance.answers)) {
      ++local.dropped_answer;
      continue;
    }
    found = r.index;
    break;
  }
  if (found) {
    ++local.mined;
  } else {
    ++local.dropped_exhausted;
  }
  if (report) *report += local;
  return found;
}

std::optional<std::size_t> mine_bm25_negative(const Bm25Index &index,
                                              const std::vector<Passage> &passages,
                                              const SlotInstance &instance,
                                              std::size_t pool_size, MiningReport *report) {
  auto ranked = index.search(keyword_query(instance.subject, instance.relation), pool_size);
  return first_valid_negative(ranked, passages, instance, report);
}

std::optional<std::size_t> positive_passage(const std::vector<Passage> &passages,
                                            const SlotInstance &instance) {
  std::optional<std::size_t> best;
  std::size_t best_overlap = 0;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    std::size_t overlap = 0;
    for (const auto &ref : passages[i].paragraph_ids) {
      if (std::find(instance.provenance.begin(), instance.provenance.end(), ref) !=
          instance.provenance.end()) {
        ++overlap;
      }
    }
    if (overlap == 0) continue;
    if (!best || overlap > best_overlap ||
        (overlap == best_overlap && passages[i].passage_id < passages[*best].passage_id)) {
      best = i;
      best_overlap = overlap;
    }
  }
  return best;
}

void check_triple(const DprTriple &t, const std::vector<Passage> &passages,
                  const std::vector<SlotInstance> &instances) {
  const SlotInstance &inst = instances.at(t.instance);
  if (!overlaps(passages.at(t.positive), inst.provenance)) {
    throw std::logic_error("triple " + inst.query_id + ": positive misses gold provenance");
  }
  const Passage &neg = passages.at(t.hard_negative);
  if (overlaps(neg, inst.provenance)) {
    throw std::logic_error("triple " + inst.query_id + ": negative overlaps gold provenance");
  }
  if (contains_answer(neg, inst.answers)) {
    throw std::logic_error("triple " + inst.query_id + ": negative contains an answer");
  }
}

BuiltTriples mine_bm25_triples(const Bm25Index &index, const std::vector<Passage> &passages,
                               const std::vector<SlotInstance> &instances,
                               std::size_t pool_size) {
  BuiltTriples out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto pos = positive_passage(passages, instances[i]);
    if (!pos) {
      ++out.no_positive;
      continue;
    }
    auto neg = mine_bm25_negative(index, passages, instances[i], pool_size, &out.report);
    if (!neg) continue;
    DprTriple t{i, *pos, *neg};
    check_triple(t, passages, instances);
    out.triples.push_back(t);
  }
  return out;
}

void write_triples_jsonl(const std::string &path, const std::vector<DprTriple> &triples,
                         const std::vector<Passage> &passages,
                         const std::vector<SlotInstance> &instances) {
  std::string out;
  for (const auto &t : triples) {
    nlohmann::json row = {{"query_id", instances.at(t.instance).query_id},
                          {"positive", passages.at(t.positive).passage_id},
                          {"negative", passages.at(t.hard_negative).passage_id}};
    out += row.dump();
    out += '\n';
  }
  write_file(path, out);
}

std::vector<DprTriple> read_triples_jsonl(const std::string &path,
                                          const std::vector<Passage> &passages,
                                          const std::vector<SlotInstance> &instances) {
  std::unordered_map<std::string, std::size_t> pid, qid;
  for (std::size_t i = 0; i < passages.size(); ++i) pid[passages[i].passage_id] = i;
  for (std::size_t i = 0; i < instances.size(); ++i) qid[instances[i].query_id] = i;
  std::vector<DprTriple> out;
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  auto lookup = [&](const auto &map, const std::string &key) {
    auto it = map.find(key);
    if (it == map.end()) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + ": unknown id " + key);
    }
    return it->second;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto obj = nlohmann::json::parse(line);
    out.push_back({lookup(qid, obj.at("query_id").get<std::string>()),
                   lookup(pid, obj.at("positive").get<std::string>()),
                   lookup(pid, obj.at("negative").get<std::string>())});
  }
  return out;
}

}  // namespace kgi
