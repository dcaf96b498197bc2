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

#ifndef KGI_CORPUS_H_
#define KGI_CORPUS_H_

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kgi {

using TokenId = uint32_t;

// (doc_id, paragraph_index): the unit of provenance.
struct ParagraphRef {
  std::string doc_id;
  int paragraph = 0;

  auto operator<=>(const ParagraphRef &) const = default;
};

struct Document {
  std::string doc_id;
  std::string title;
  std::vector<std::string> paragraphs;
  std::vector<std::pair<int, std::string>> entities;  // (paragraph_index, entity)
};

struct Passage {
  std::string passage_id;  // "{doc_id}:{first_paragraph_index}"
  std::string doc_id;
  std::string title;
  std::string text;
  std::vector<ParagraphRef> paragraph_ids;  // ordered, all from doc_id
};

struct SlotInstance {
  std::string query_id;
  std::string subject;
  std::string relation;
  std::vector<std::string> answers;  // accepted aliases, first one is the target
  std::vector<ParagraphRef> provenance;
};

// A scored passage. Lists are kept sorted by score desc then passage_id asc.
struct RetrievalResult {
  std::size_t index = 0;  // position in the passage list
  std::string passage_id;
  double score = 0.0;
};

bool ranks_before(const RetrievalResult &a, const RetrievalResult &b);
void sort_results(std::vector<RetrievalResult> &results);

// Word-level vocabulary with fixed reserved ids.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kBos = 3;
  static constexpr TokenId kEos = 4;
  static constexpr std::size_t kNumReserved = 5;

  Vocab();
  explicit Vocab(const std::vector<std::string> &regular_tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string &token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string> &tokens() const { return tokens_; }

  // sha256 over the newline-joined token list; checkpoints bind to it.
  std::string hash() const;

  void save(const std::string &path) const;
  static Vocab load(const std::string &path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Lowercased words split on whitespace and punctuation. "[SEP]" survives as
// a single word "[sep]".
std::vector<std::string> split_words(std::string_view text);
// Byte offset just past the n-th word (n >= 1), or text.size() if fewer.
std::size_t word_prefix_end(std::string_view text, std::size_t n);

std::vector<TokenId> tokenize(const Vocab &vocab, std::string_view text);
std::string detokenize(const Vocab &vocab, const std::vector<TokenId> &ids);

std::vector<Document> read_jsonl_corpus(const std::string &path);
void write_jsonl_corpus(const std::string &path, const std::vector<Document> &docs);
std::vector<SlotInstance> read_jsonl_instances(const std::string &path);
void write_jsonl_instances(const std::string &path,
                           const std::vector<SlotInstance> &instances);
std::vector<Passage> read_jsonl_passages(const std::string &path);
void write_jsonl_passages(const std::string &path, const std::vector<Passage> &passages);

std::vector<Passage> segment_documents(const std::vector<Document> &docs,
                                       std::size_t max_passage_tokens);

// Counts words in passage titles and texts plus any extra texts (rendered
// queries, relation labels) that must not collapse to UNK.
Vocab build_vocab(const std::vector<Passage> &passages, int min_freq,
                  const std::vector<std::string> &extra_texts = {});

// Text fed to the context encoder and generator for a passage.
std::string passage_encoder_text(const Passage &p);

std::string render_query(std::string_view subject, std::string_view relation);
// Keyword form of the query: the separator is dropped.
std::string keyword_query(std::string_view subject, std::string_view relation);
// "per:employee_of" -> "employee of".
std::string normalize_relation(std::string_view relation);

// Entities annotated on each passage's source paragraphs, aligned with passages.
std::vector<std::vector<std::string>> passage_entities(const std::vector<Document> &docs,
                                                       const std::vector<Passage> &passages);

class CooccurrenceIndex {
 public:
  CooccurrenceIndex() = default;

  std::size_t total_passages() const { return total_; }
  int count(const std::string &entity) const;
  int pair_count(const std::string &e, const std::string &v) const;
  // Entities sharing at least one passage with e, e itself excluded, sorted.
  std::vector<std::string> cooccurring(const std::string &e) const;
  const std::map<std::string, std::vector<std::size_t>> &postings() const { return postings_; }

  friend CooccurrenceIndex build_cooccurrence_index(
      const std::vector<Passage> &passages,
      const std::vector<std::vector<std::string>> &annotations);

 private:
  std::size_t total_ = 0;
  std::map<std::string, std::vector<std::size_t>> postings_;  // entity -> passage indices
  std::map<std::pair<std::string, std::string>, int> pairs_;  // keys ordered (min, max)
};

CooccurrenceIndex build_cooccurrence_index(
    const std::vector<Passage> &passages,
    const std::vector<std::vector<std::string>> &annotations);

// True if any of the passage's paragraphs is in the provenance set.
bool overlaps(const Passage &p, const std::vector<ParagraphRef> &provenance);
std::string to_lower(std::string_view s);

}  // namespace kgi

#endif  // KGI_CORPUS_H_
