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

#ifndef KGI_SPARSE_INDEX_H_
#define KGI_SPARSE_INDEX_H_

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgi/corpus.h"

namespace kgi {

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

struct Posting {
  std::size_t passage = 0;
  int tf = 0;
};

// Okapi BM25 over the word-split title + text of each passage.
class Bm25Index {
 public:
  Bm25Index(const std::vector<Passage> &passages, Bm25Params params);

  std::size_t size() const { return ids_.size(); }
  const Bm25Params &params() const { return params_; }
  double average_length() const { return avg_length_; }
  int length(std::size_t passage) const { return lengths_[passage]; }
  double idf(const std::string &term) const;
  const std::vector<Posting> *postings(const std::string &term) const;
  // Score of a single passage; the brute-force path used by tests.
  double score(const std::vector<std::string> &query_terms, std::size_t passage) const;

  std::vector<RetrievalResult> search(const std::string &query_text, std::size_t k) const;

 private:
  Bm25Params params_;
  std::vector<std::string> ids_;
  std::vector<int> lengths_;
  double avg_length_ = 0.0;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

Bm25Index build_bm25_index(const std::vector<Passage> &passages, double k1 = 0.9,
                           double b = 0.4);
std::vector<RetrievalResult> bm25_search(const Bm25Index &index, const std::string &query_text,
                                         std::size_t k);

// Counters for the negative-mining exclusion rules. The two skip counters
// count candidate passages; dropped_exhausted counts instances.
struct MiningReport {
  long mined = 0;
  long dropped_gold_overlap = 0;
  long dropped_answer = 0;
  long dropped_exhausted = 0;

  MiningReport &operator+=(const MiningReport &o);
};

// A training triple by passage index into the passage list.
struct DprTriple {
  std::size_t instance = 0;
  std::size_t positive = 0;
  std::size_t hard_negative = 0;
};

bool contains_answer(const Passage &p, const std::vector<std::string> &answers);

// Applies the exclusion rules over ranked results and returns the first survivor.
std::optional<std::size_t> first_valid_negative(const std::vector<RetrievalResult> &ranked,
                                                const std::vector<Passage> &passages,
                                                const SlotInstance &instance,
                                                MiningReport *report);

std::optional<std::size_t> mine_bm25_negative(const Bm25Index &index,
                                              const std::vector<Passage> &passages,
                                              const SlotInstance &instance,
                                              std::size_t pool_size,
                                              MiningReport *report = nullptr);

// The passage with the largest paragraph overlap with the gold provenance,
// ties to the lowest passage_id; none if nothing overlaps.
std::optional<std::size_t> positive_passage(const std::vector<Passage> &passages,
                                            const SlotInstance &instance);

// Checks the DprTriple invariants; throws on violation.
void check_triple(const DprTriple &t, const std::vector<Passage> &passages,
                  const std::vector<SlotInstance> &instances);

struct BuiltTriples {
  std::vector<DprTriple> triples;
  MiningReport report;
  long no_positive = 0;
};

BuiltTriples mine_bm25_triples(const Bm25Index &index, const std::vector<Passage> &passages,
                               const std::vector<SlotInstance> &instances,
                               std::size_t pool_size);

void write_triples_jsonl(const std::string &path, const std::vector<DprTriple> &triples,
                         const std::vector<Passage> &passages,
                         const std::vector<SlotInstance> &instances);
std::vector<DprTriple> read_triples_jsonl(const std::string &path,
                                          const std::vector<Passage> &passages,
                                          const std::vector<SlotInstance> &instances);

}  // namespace kgi

#endif  // KGI_SPARSE_INDEX_H_
