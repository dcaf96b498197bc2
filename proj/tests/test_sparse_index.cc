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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "kgi/common.h"
#include "kgi/sparse_index.h"
#include "test_util.h"

namespace kgi {
namespace {

Passage make_passage(const std::string &id, const std::string &text,
                     std::vector<ParagraphRef> paras = {}) {
  if (paras.empty()) paras = {{id, 0}};
  return Passage{id, paras.front().doc_id, "", text, paras};
}

// Textbook BM25 computed from raw word lists.
double oracle_bm25(const std::vector<std::vector<std::string>> &docs,
                   const std::vector<std::string> &query, std::size_t d, double k1, double b) {
  double avg = 0.0;
  for (const auto &doc : docs) avg += static_cast<double>(doc.size());
  avg /= static_cast<double>(docs.size());
  const std::set<std::string> uniq(query.begin(), query.end());
  double s = 0.0;
  for (const auto &t : uniq) {
    double df = 0;
    for (const auto &doc : docs) df += std::count(doc.begin(), doc.end(), t) > 0;
    const double tf = static_cast<double>(std::count(docs[d].begin(), docs[d].end(), t));
    if (tf == 0) continue;
    const double n = static_cast<double>(docs.size());
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    const double len = static_cast<double>(docs[d].size());
    s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avg));
  }
  return s;
}

TEST(Bm25, DefaultsAndStats) {
  const std::vector<Passage> ps{make_passage("a", "x y"), make_passage("b", "x x y z")};
  const auto idx = build_bm25_index(ps);
  EXPECT_DOUBLE_EQ(idx.params().k1, 0.9);
  EXPECT_DOUBLE_EQ(idx.params().b, 0.4);
  EXPECT_EQ(idx.length(0), 2);
  EXPECT_EQ(idx.length(1), 4);
  EXPECT_DOUBLE_EQ(idx.average_length(), 3.0);
  ASSERT_NE(idx.postings("x"), nullptr);
  EXPECT_EQ((*idx.postings("x"))[1].tf, 2);
  EXPECT_EQ(idx.postings("q"), nullptr);
}

TEST(Bm25, MatchesOracleOnRandomCorpora) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Passage> ps;
    std::vector<std::vector<std::string>> raw;
    const std::size_t n = 5 + rng.below(20);
    for (std::size_t i = 0; i < n; ++i) {
      std::string text;
      std::vector<std::string> words;
      const std::size_t len = 1 + rng.below(12);
      for (std::size_t j = 0; j < len; ++j) {
        const std::string w = "t" + std::to_string(rng.below(10));
        words.push_back(w);
        text += (j ? " " : "") + w;
      }
      raw.push_back(words);
      ps.push_back(make_passage("p" + std::to_string(100 + i), text));
    }
    const std::vector<std::string> query{"t1", "t3", "t3", "t7"};
    const auto idx = build_bm25_index(ps);
    const auto top = bm25_search(idx, "t1 t3 t3 t7", n);
    std::map<std::string, double> got;
    for (const auto &r : top) got[r.passage_id] = r.score;
    for (std::size_t d = 0; d < n; ++d) {
      const double want = oracle_bm25(raw, query, d, 0.9, 0.4);
      EXPECT_NEAR(idx.score(query, d), want, 1e-12);
      if (want > 0) {
        ASSERT_TRUE(got.count(ps[d].passage_id));
        EXPECT_NEAR(got[ps[d].passage_id], want, 1e-12);
      } else {
        EXPECT_FALSE(got.count(ps[d].passage_id));
      }
    }
    for (std::size_t i = 1; i < top.size(); ++i) {
      EXPECT_TRUE(top[i - 1].score > top[i].score ||
                  (top[i - 1].score == top[i].score && top[i - 1].passage_id < top[i].passage_id));
    }
  }
}

TEST(Bm25, RanksTermOverlapFirst) {
  const std::vector<Passage> ps{make_passage("a", "paris france"), make_passage("b", "berlin")};
  const auto top = bm25_search(build_bm25_index(ps), "paris", 2);
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(top[0].passage_id, "a");
}

TEST(Bm25, TiesByPassageId) {
  const std::vector<Passage> ps{make_passage("b", "x"), make_passage("a", "x")};
  const auto top = bm25_search(build_bm25_index(ps), "x", 2);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].passage_id, "a");
}

TEST(Bm25, EmptyAndNoMatch) {
  const auto idx = build_bm25_index({make_passage("a", "x")});
  EXPECT_TRUE(bm25_search(idx, "", 3).empty());
  EXPECT_TRUE(bm25_search(idx, "zzz", 3).empty());
  EXPECT_THROW(bm25_search(idx, "x", 0), ValidationError);
  EXPECT_THROW(build_bm25_index({}), ValidationError);
}

TEST(Bm25, SeparatorIgnored) {
  const auto idx = build_bm25_index({make_passage("a", "ann lee"), make_passage("b", "spouse")});
  EXPECT_EQ(bm25_search(idx, render_query("Ann Lee", "spouse"), 2).size(), 2u);
  EXPECT_DOUBLE_EQ(idx.score({"ann", "[sep]"}, 0), idx.score({"ann"}, 0));
}

SlotInstance instance(std::vector<std::string> answers, std::vector<ParagraphRef> prov) {
  return SlotInstance{"q", "Ann", "spouse", std::move(answers), std::move(prov)};
}

TEST(Mining, SkipsGoldOverlapThenAnswerText) {
  const std::vector<Passage> ps{make_passage("g:0", "ann gold", {{"g", 0}}),
                                make_passage("n:0", "ann married bob", {{"n", 0}}),
                                make_passage("m:0", "ann other", {{"m", 0}})};
  const auto inst = instance({"Bob"}, {{"g", 0}});
  std::vector<RetrievalResult> ranked{{0, "g:0", 3}, {1, "n:0", 2}, {2, "m:0", 1}};
  MiningReport report;
  EXPECT_EQ(first_valid_negative(ranked, ps, inst, &report), std::optional<std::size_t>(2));
  EXPECT_EQ(report.mined, 1);
  EXPECT_EQ(report.dropped_gold_overlap, 1);
  EXPECT_EQ(report.dropped_answer, 1);
  EXPECT_EQ(report.dropped_exhausted, 0);
}

TEST(Mining, Exhausted) {
  const std::vector<Passage> ps{make_passage("g:0", "ann", {{"g", 0}})};
  MiningReport report;
  EXPECT_FALSE(first_valid_negative({{0, "g:0", 1}}, ps, instance({"x"}, {{"g", 0}}), &report));
  EXPECT_EQ(report.dropped_exhausted, 1);
  EXPECT_EQ(report.mined, 0);
}

TEST(Mining, PositiveIsLargestOverlap) {
  const std::vector<Passage> ps{make_passage("d:0", "a", {{"d", 0}}),
                                make_passage("d:1", "b", {{"d", 1}, {"d", 2}}),
                                make_passage("e:0", "c", {{"e", 0}})};
  EXPECT_EQ(positive_passage(ps, instance({"x"}, {{"d", 0}, {"d", 1}, {"d", 2}})),
            std::optional<std::size_t>(1));
  EXPECT_EQ(positive_passage(ps, instance({"x"}, {{"d", 0}, {"e", 0}})),
            std::optional<std::size_t>(0));
  EXPECT_FALSE(positive_passage(ps, instance({"x"}, {{"z", 0}})));
}

TEST(Mining, TriplesObeyInvariants) {
  Rng rng(9);
  std::vector<Passage> ps;
  std::vector<SlotInstance> insts;
  for (int d = 0; d < 30; ++d) {
    const std::string doc = "d" + std::to_string(d);
    const std::string subj = "s" + std::to_string(d % 6);
    const std::string obj = "o" + std::to_string(rng.below(5));
    ps.push_back(make_passage(doc + ":0", subj + " spouse " + obj, {{doc, 0}}));
    insts.push_back({"q" + std::to_string(d), subj, "spouse", {obj}, {{doc, 0}}});
  }
  const auto idx = build_bm25_index(ps);
  const auto built = mine_bm25_triples(idx, ps, insts, 20);
  EXPECT_EQ(built.no_positive, 0);
  EXPECT_EQ(built.report.mined + built.report.dropped_exhausted, static_cast<long>(insts.size()));
  EXPECT_EQ(static_cast<long>(built.triples.size()), built.report.mined);
  for (const auto &t : built.triples) EXPECT_NO_THROW(check_triple(t, ps, insts));

  TempDir dir;
  write_triples_jsonl(dir.file("t.jsonl"), built.triples, ps, insts);
  const auto back = read_triples_jsonl(dir.file("t.jsonl"), ps, insts);
  ASSERT_EQ(back.size(), built.triples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].instance, built.triples[i].instance);
    EXPECT_EQ(back[i].positive, built.triples[i].positive);
    EXPECT_EQ(back[i].hard_negative, built.triples[i].hard_negative);
  }
}

TEST(Mining, CheckTripleRejectsBadNegative) {
  const std::vector<Passage> ps{make_passage("g:0", "gold", {{"g", 0}}),
                                make_passage("n:0", "says bob", {{"n", 0}})};
  const std::vector<SlotInstance> insts{instance({"bob"}, {{"g", 0}})};
  EXPECT_THROW(check_triple({0, 0, 1}, ps, insts), std::logic_error);
  EXPECT_THROW(check_triple({0, 0, 0}, ps, insts), std::logic_error);
  EXPECT_THROW(check_triple({0, 1, 1}, ps, insts), std::logic_error);
}

}  // namespace
}  // namespace kgi
