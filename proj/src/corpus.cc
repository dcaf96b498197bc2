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

#include "kgi/corpus.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kgi/common.h"

namespace kgi {

using nlohmann::json;

bool ranks_before(const RetrievalResult &a, const RetrievalResult &b) {
  if (a.score != b.score) return a.score > b.score;
  return a.passage_id < b.passage_id;
}

void sort_results(std::vector<RetrievalResult> &results) {
  std::sort(results.begin(), results.end(), ranks_before);
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char &c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// ---------------------------------------------------------------------------
// Tokenization

namespace {

constexpr std::string_view kReservedTokens[] = {"[pad]", "[unk]", "[sep]", "[bos]", "[eos]"};

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

bool starts_with_sep(std::string_view text, std::size_t pos) {
  if (pos + 5 > text.size()) return false;
  return to_lower(text.substr(pos, 5)) == "[sep]";
}

// Calls visit(word, end_offset) for each word; stops when visit returns false.
template <typename Visit>
void for_each_word(std::string_view text, Visit visit) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '[' && starts_with_sep(text, i)) {
      if (!visit(std::string("[sep]"), i + 5)) return;
      i += 5;
      continue;
    }
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
    if (!visit(to_lower(text.substr(i, j - i)), j)) return;
    i = j;
  }
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  for_each_word(text, [&](std::string w, std::size_t) {
    words.push_back(std::move(w));
    return true;
  });
  return words;
}

std::size_t word_prefix_end(std::string_view text, std::size_t n) {
  std::size_t end = text.size();
  std::size_t seen = 0;
  for_each_word(text, [&](const std::string &, std::size_t stop) {
    if (++seen == n) {
      end = stop;
      return false;
    }
    return true;
  });
  return end;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string> &regular_tokens) {
  for (auto t : kReservedTokens) tokens_.emplace_back(t);
  for (const auto &t : regular_tokens) {
    if (std::find(std::begin(kReservedTokens), std::end(kReservedTokens), t) !=
        std::end(kReservedTokens)) {
      continue;
    }
    tokens_.push_back(t);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = ids_.emplace(tokens_[i], static_cast<TokenId>(i));
    require(inserted, "duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return ids_.count(std::string(token)) > 0;
}

std::string Vocab::hash() const {
  std::string joined;
  for (const auto &t : tokens_) {
    joined += t;
    joined += '\n';
  }
  return sha256_hex(joined);
}

void Vocab::save(const std::string &path) const {
  std::string out;
  for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\n';
  }
  write_file(path, out);
}

Vocab Vocab::load(const std::string &path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocab(tokens);
}

std::vector<TokenId> tokenize(const Vocab &vocab, std::string_view text) {
  std::vector<TokenId> ids;
  for_each_word(text, [&](const std::string &w, std::size_t) {
    ids.push_back(vocab.id(w));
    return true;
  });
  return ids;
}

std::string detokenize(const Vocab &vocab, const std::vector<TokenId> &ids) {
  std::string out;
  for (TokenId id : ids) {
    if (id == Vocab::kEos || id == Vocab::kBos || id == Vocab::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

Vocab build_vocab(const std::vector<Passage> &passages, int min_freq,
                  const std::vector<std::string> &extra_texts) {
  require(min_freq >= 1, "min_freq must be >= 1");
  std::unordered_map<std::string, long> freq;
  auto count = [&](std::string_view text) {
    for (auto &w : split_words(text)) ++freq[w];
  };
  for (const auto &p : passages) {
    count(p.title);
    count(p.text);
  }
  for (const auto &t : extra_texts) count(t);
  std::vector<std::pair<std::string, long>> kept;
  for (auto &[w, f] : freq) {
    if (f >= min_freq) kept.emplace_back(w, f);
  }
  std::sort(kept.begin(), kept.end(), [](const auto &a, const auto &b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto &[w, f] : kept) tokens.push_back(w);
  return Vocab(tokens);
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

template <typename F>
void for_each_line(const std::string &path, F parse_line) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      parse_line(json::parse(line));
    } catch (const json::exception &e) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError &e) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

const json &field(const json &obj, const char *name) {
  if (!obj.is_object() || !obj.contains(name)) {
    throw ValidationError(std::string("missing field \"") + name + "\"");
  }
  return obj.at(name);
}

std::vector<ParagraphRef> parse_refs(const json &arr) {
  std::vector<ParagraphRef> refs;
  for (const auto &r : arr) {
    refs.push_back({r.at(0).get<std::string>(), r.at(1).get<int>()});
  }
  return refs;
}

json refs_json(const std::vector<ParagraphRef> &refs) {
  json arr = json::array();
  for (const auto &r : refs) arr.push_back(json::array({r.doc_id, r.paragraph}));
  return arr;
}

void write_lines(const std::string &path, const std::vector<json> &rows) {
  std::string out;
  for (const auto &r : rows) {
    out += r.dump();
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace

std::vector<Document> read_jsonl_corpus(const std::string &path) {
  std::vector<Document> docs;
  std::set<std::string> seen;
  for_each_line(path, [&](const json &obj) {
    Document d;
    d.doc_id = field(obj, "doc_id").get<std::string>();
    d.title = field(obj, "title").get<std::string>();
    for (const auto &p : field(obj, "paragraphs")) {
      d.paragraphs.push_back(p.get<std::string>());
      require(!d.paragraphs.back().empty(), "empty paragraph in " + d.doc_id);
    }
    if (obj.contains("entities")) {
      for (const auto &e : obj.at("entities")) {
        int para = e.at(0).get<int>();
        require(para >= 0 && para < static_cast<int>(d.paragraphs.size()),
                "entity paragraph index out of range in " + d.doc_id);
        d.entities.emplace_back(para, e.at(1).get<std::string>());
      }
    }
    require(seen.insert(d.doc_id).second, "duplicate doc_id " + d.doc_id);
    docs.push_back(std::move(d));
  });
  return docs;
}

void write_jsonl_corpus(const std::string &path, const std::vector<Document> &docs) {
  std::vector<json> rows;
  for (const auto &d : docs) {
    json obj = {{"doc_id", d.doc_id}, {"title", d.title}, {"paragraphs", d.paragraphs}};
    json ents = json::array();
    for (const auto &[para, name] : d.entities) ents.push_back(json::array({para, name}));
    obj["entities"] = ents;
    rows.push_back(std::move(obj));
  }
  write_lines(path, rows);
}

std::vector<SlotInstance> read_jsonl_instances(const std::string &path) {
  std::vector<SlotInstance> out;
  for_each_line(path, [&](const json &obj) {
    SlotInstance s;
    s.query_id = field(obj, "query_id").get<std::string>();
    s.subject = field(obj, "subject").get<std::string>();
    s.relation = field(obj, "relation").get<std::string>();
    s.answers = field(obj, "answers").get<std::vector<std::string>>();
    require(!s.answers.empty(), "instance " + s.query_id + " has no answers");
    if (obj.contains("provenance")) s.provenance = parse_refs(obj.at("provenance"));
    out.push_back(std::move(s));
  });
  return out;
}

void write_jsonl_instances(const std::string &path,
                           const std::vector<SlotInstance> &instances) {
  std::vector<json> rows;
  for (const auto &s : instances) {
    rows.push_back({{"query_id", s.query_id},
                    {"subject", s.subject},
                    {"relation", s.relation},
                    {"answers", s.answers},
                    {"provenance", refs_json(s.provenance)}});
  }
  write_lines(path, rows);
}

std::vector<Passage> read_jsonl_passages(const std::string &path) {
  std::vector<Passage> out;
  for_each_line(path, [&](const json &obj) {
    Passage p;
    p.passage_id = field(obj, "passage_id").get<std::string>();
    p.doc_id = field(obj, "doc_id").get<std::string>();
    p.title = field(obj, "title").get<std::string>();
    p.text = field(obj, "text").get<std::string>();
    p.paragraph_ids = parse_refs(field(obj, "paragraphs"));
    out.push_back(std::move(p));
  });
  return out;
}

void write_jsonl_passages(const std::string &path, const std::vector<Passage> &passages) {
  std::vector<json> rows;
  for (const auto &p : passages) {
    rows.push_back({{"passage_id", p.passage_id},
                    {"doc_id", p.doc_id},
                    {"title", p.title},
                    {"text", p.text},
                    {"paragraphs", refs_json(p.paragraph_ids)}});
  }
  write_lines(path, rows);
}

// ---------------------------------------------------------------------------
// Segmentation

std::vector<Passage> segment_documents(const std::vector<Document> &docs,
                                       std::size_t max_passage_tokens) {
  require(max_passage_tokens >= 1, "max_passage_tokens must be >= 1");
  std::vector<Passage> out;
  for (const auto &doc : docs) {
    Passage cur;
    std::size_t cur_tokens = 0;
    auto flush = [&] {
      if (cur.paragraph_ids.empty()) return;
      cur.passage_id = doc.doc_id + ":" + std::to_string(cur.paragraph_ids.front().paragraph);
      cur.doc_id = doc.doc_id;
      cur.title = doc.title;
      out.push_back(std::move(cur));
      cur = Passage{};
      cur_tokens = 0;
    };
    auto append = [&](std::string_view text, int index) {
      if (!cur.text.empty()) cur.text += ' ';
      cur.text += text;
      cur.paragraph_ids.push_back({doc.doc_id, index});
    };
    for (std::size_t i = 0; i < doc.paragraphs.size(); ++i) {
      const std::string &para = doc.paragraphs[i];
      const std::size_t n = split_words(para).size();
      const int index = static_cast<int>(i);
      if (n > max_passage_tokens) {
        flush();
        append(std::string_view(para).substr(0, word_prefix_end(para, max_passage_tokens)), index);
        flush();
        continue;
      }
      if (!cur.paragraph_ids.empty() && cur_tokens + n > max_passage_tokens) flush();
      append(para, index);
      cur_tokens += n;
    }
    flush();
  }
  return out;
}

std::string passage_encoder_text(const Passage &p) { return p.title + " " + p.text; }

// ---------------------------------------------------------------------------
// Queries

std::string render_query(std::string_view subject, std::string_view relation) {
  require(!subject.empty(), "render_query: empty subject");
  require(!relation.empty(), "render_query: empty relation");
  return std::string(subject) + " [SEP] " + std::string(relation);
}

std::string keyword_query(std::string_view subject, std::string_view relation) {
  require(!subject.empty(), "keyword_query: empty subject");
  require(!relation.empty(), "keyword_query: empty relation");
  return std::string(subject) + " " + std::string(relation);
}

std::string normalize_relation(std::string_view relation) {
  std::string_view r = relation;
  for (std::string_view ns : {"per:", "org:"}) {
    if (r.substr(0, ns.size()) == ns) {
      r.remove_prefix(ns.size());
      break;
    }
  }
  std::string out(r);
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

// ---------------------------------------------------------------------------
// Co-occurrence

std::vector<std::vector<std::string>> passage_entities(const std::vector<Document> &docs,
                                                       const std::vector<Passage> &passages) {
  std::map<ParagraphRef, std::vector<std::string>> by_para;
  for (const auto &d : docs) {
    for (const auto &[para, name] : d.entities) by_para[{d.doc_id, para}].push_back(name);
  }
  std::vector<std::vector<std::string>> out(passages.size());
  for (std::size_t i = 0; i < passages.size(); ++i) {
    std::set<std::string> names;
    for (const auto &ref : passages[i].paragraph_ids) {
      auto it = by_para.find(ref);
      if (it != by_para.end()) names.insert(it->second.begin(), it->second.end());
    }
    out[i].assign(names.begin(), names.end());
  }
  return out;
}

CooccurrenceIndex build_cooccurrence_index(
    const std::vector<Passage> &passages,
    const std::vector<std::vector<std::string>> &annotations) {
  require(annotations.size() == passages.size(),
          "co-occurrence annotations must align with passages");
  CooccurrenceIndex index;
  index.total_ = passages.size();
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    std::set<std::string> names(annotations[i].begin(), annotations[i].end());
    for (const auto &e : names) index.postings_[e].push_back(i);
    for (auto a = names.begin(); a != names.end(); ++a) {
      for (auto b = std::next(a); b != names.end(); ++b) ++index.pairs_[{*a, *b}];
    }
  }
  return index;
}

int CooccurrenceIndex::count(const std::string &entity) const {
  auto it = postings_.find(entity);
  return it == postings_.end() ? 0 : static_cast<int>(it->second.size());
}

int CooccurrenceIndex::pair_count(const std::string &e, const std::string &v) const {
  if (e == v) return count(e);
  auto key = e < v ? std::make_pair(e, v) : std::make_pair(v, e);
  auto it = pairs_.find(key);
  return it == pairs_.end() ? 0 : it->second;
}

std::vector<std::string> CooccurrenceIndex::cooccurring(const std::string &e) const {
  std::vector<std::string> out;
  auto it = pairs_.lower_bound({e, std::string()});
  for (; it != pairs_.end() && it->first.first == e; ++it) out.push_back(it->first.second);
  for (const auto &[key, c] : pairs_) {
    if (key.second == e) out.push_back(key.first);
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool overlaps(const Passage &p, const std::vector<ParagraphRef> &provenance) {
  for (const auto &ref : p.paragraph_ids) {
    if (std::find(provenance.begin(), provenance.end(), ref) != provenance.end()) return true;
  }
  return false;
}

}  // namespace kgi
