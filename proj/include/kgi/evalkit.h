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

#ifndef KGI_EVALKIT_H_
#define KGI_EVALKIT_H_

#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgi/biencoder.h"
#include "kgi/corpus.h"
#include "kgi/rag.h"

namespace kgi {

// Lowercase, drop punctuation, collapse whitespace.
std::string normalize_answer(std::string_view text);

// Fraction of the R gold paragraphs covered by the top R retrieved passages.
double r_precision(const std::vector<std::vector<ParagraphRef>> &retrieved,
                   const std::vector<ParagraphRef> &gold);
// 1 iff any of the top k passages covers any gold paragraph.
int recall_at_k(const std::vector<std::vector<ParagraphRef>> &retrieved,
                const std::vector<ParagraphRef> &gold, std::size_t k = 5);
double token_f1(std::string_view prediction, const std::vector<std::string> &answers);
int accuracy(std::string_view prediction, const std::vector<std::string> &answers);

struct KiltScores {
  double kilt_ac = 0.0;
  double kilt_f1 = 0.0;
};

// Slot scores count only on instances with R-Precision exactly 1.
KiltScores kilt_scores(std::span<const double> accuracy, std::span<const double> f1,
                       std::span<const double> r_precision);

struct MetricsReport {
  double r_precision = 0.0;
  double recall_at_5 = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  double kilt_ac = 0.0;
  double kilt_f1 = 0.0;
  long n_instances = 0;
};

struct RankingReport {
  double mrr = 0.0;
  double hit_at_1 = 0.0;
  double hit_at_5 = 0.0;
  double hit_at_10 = 0.0;
  long n_instances = 0;
};

// Throw std::logic_error when a report breaks the metric invariants.
void check_report(const MetricsReport &r);
void check_report(const RankingReport &r);

// Rank of the first candidate matching any alias, 1-based; 0 if absent.
std::size_t gold_rank(const std::vector<std::string> &ranked,
                      const std::vector<std::string> &answers);
RankingReport mrr_hits(const std::vector<std::vector<std::string>> &ranked,
                       const std::vector<std::vector<std::string>> &answers);

// Scores below every finite value; such candidates rank last.
inline constexpr double kUnrankable = -std::numeric_limits<double>::infinity();

double pmi_score(const CooccurrenceIndex &cooc, const std::string &e, const std::string &v);

using EmbeddingTable = std::map<std::string, std::vector<double>>;

double offset_score(std::span<const double> e, std::span<const double> s,
                    std::span<const double> v);
double offset_score(const EmbeddingTable &table, const std::string &e, const std::string &s,
                    const std::string &v);
// Mean of the encoder's token embeddings over the words of text.
std::vector<double> text_embedding(const EncoderParams &encoder, const Vocab &vocab,
                                   const std::string &text);

// exp(mean NLL) of tokens, the generator reading the tokens themselves as input.
double perplexity(const GeneratorParams &gen, std::span<const TokenId> tokens);
double perplexity_score(const GeneratorParams &gen, const Vocab &vocab, const std::string &e,
                        const std::string &s, const std::string &v);

struct ScoredCandidate {
  std::string candidate;
  double score = 0.0;
};

// Best first: score desc (asc when lower_is_better), ties by candidate asc.
std::vector<ScoredCandidate> rank_candidates(
    const std::vector<std::string> &candidates,
    const std::function<double(const std::string &)> &score, bool lower_is_better = false);

struct Prediction {
  std::string query_id;
  std::string answer;
  double logprob = 0.0;
  std::vector<std::string> provenance;  // retrieved passage ids, rank order
  std::vector<double> scores;
};

void write_predictions_jsonl(const std::string &path, const std::vector<Prediction> &preds);
std::vector<Prediction> read_predictions_jsonl(const std::string &path);

struct InstanceMetrics {
  std::string query_id;
  double r_precision = 0.0;
  int recall_at_5 = 0;
  int accuracy = 0;
  double f1 = 0.0;
};

struct KiltEvaluation {
  MetricsReport metrics;
  std::vector<InstanceMetrics> per_instance;
};

// Every instance needs a prediction with the same query_id.
KiltEvaluation evaluate_kilt(const std::vector<Prediction> &predictions,
                             const std::vector<SlotInstance> &instances,
                             const std::vector<Passage> &passages);

struct RankedInstance {
  std::string query_id;
  std::vector<std::string> ranked;
};

struct RankingEvaluation {
  RankingReport metrics;
  std::vector<std::pair<std::string, std::size_t>> per_instance;  // (query_id, gold rank)
};

RankingEvaluation evaluate_ranking(const std::vector<RankedInstance> &ranked,
                                   const std::vector<SlotInstance> &instances);

std::string report_json(const KiltEvaluation &e);
std::string report_json(const RankingEvaluation &e);

}  // namespace kgi

#endif  // KGI_EVALKIT_H_
