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

#include "kgi/evalkit.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace kgi {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<std::string> answer_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in(normalize_answer(text));
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

double f1_single(const std::vector<std::string> &pred, const std::vector<std::string> &gold) {
  if (pred.empty() || gold.empty()) return pred.empty() && gold.empty() ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (const auto &t : gold) ++counts[t];
  int common = 0;
  for (const auto &t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(pred.size());
  const double r = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * p * r / (p + r);
}

bool covers(const std::vector<ParagraphRef> &lineage, const ParagraphRef &g) {
  return std::find(lineage.begin(), lineage.end(), g) != lineage.end();
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (c < 0x80 && std::ispunct(c)) continue;
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

double r_precision(const std::vector<std::vector<ParagraphRef>> &retrieved,
                   const std::vector<ParagraphRef> &gold) {
  require(!gold.empty(), "r_precision: empty gold provenance");
  const std::set<ParagraphRef> gold_set(gold.begin(), gold.end());
  const std::size_t r = gold_set.size();
  std::set<ParagraphRef> hit;
  for (std::size_t i = 0; i < retrieved.size() && i < r; ++i) {
    for (const auto &g : gold_set) {
      if (covers(retrieved[i], g)) hit.insert(g);
    }
  }
  return static_cast<double>(hit.size()) / static_cast<double>(r);
}

int recall_at_k(const std::vector<std::vector<ParagraphRef>> &retrieved,
                const std::vector<ParagraphRef> &gold, std::size_t k) {
  for (std::size_t i = 0; i < retrieved.size() && i < k; ++i) {
    for (const auto &g : gold) {
      if (covers(retrieved[i], g)) return 1;
    }
  }
  return 0;
}

double token_f1(std::string_view prediction, const std::vector<std::string> &answers) {
  const auto pred = answer_tokens(prediction);
  double best = 0.0;
  for (const auto &a : answers) best = std::max(best, f1_single(pred, answer_tokens(a)));
  return best;
}

int accuracy(std::string_view prediction, const std::vector<std::string> &answers) {
  const auto pred = normalize_answer(prediction);
  for (const auto &a : answers) {
    if (normalize_answer(a) == pred) return 1;
  }
  return 0;
}

KiltScores kilt_scores(std::span<const double> accuracy, std::span<const double> f1,
                       std::span<const double> r_precision) {
  require(accuracy.size() == f1.size() && f1.size() == r_precision.size(),
          "kilt_scores: per-instance lists differ in length");
  KiltScores out;
  if (accuracy.empty()) return out;
  for (std::size_t i = 0; i < accuracy.size(); ++i) {
    if (r_precision[i] != 1.0) continue;
    out.kilt_ac += accuracy[i];
    out.kilt_f1 += f1[i];
  }
  const auto n = static_cast<double>(accuracy.size());
  out.kilt_ac /= n;
  out.kilt_f1 /= n;
  return out;
}

void check_report(const MetricsReport &r) {
  for (double v : {r.r_precision, r.recall_at_5, r.accuracy, r.f1, r.kilt_ac, r.kilt_f1}) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::logic_error("metric outside [0, 1]");
  }
  if (r.kilt_ac > r.accuracy || r.kilt_ac > r.r_precision || r.kilt_f1 > r.f1) {
    throw std::logic_error("KILT metric exceeds its ungated counterpart");
  }
}

void check_report(const RankingReport &r) {
  for (double v : {r.mrr, r.hit_at_1, r.hit_at_5, r.hit_at_10}) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::logic_error("metric outside [0, 1]");
  }
  if (r.hit_at_1 > r.hit_at_5 || r.hit_at_5 > r.hit_at_10 || r.mrr < r.hit_at_1) {
    throw std::logic_error("ranking metrics out of order");
  }
}

std::size_t gold_rank(const std::vector<std::string> &ranked,
                      const std::vector<std::string> &answers) {
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (accuracy(ranked[i], answers) == 1) return i + 1;
  }
  return 0;
}

RankingReport mrr_hits(const std::vector<std::vector<std::string>> &ranked,
                       const std::vector<std::vector<std::string>> &answers) {
  require(ranked.size() == answers.size(), "mrr_hits: per-instance lists differ in length");
  RankingReport out;
  out.n_instances = static_cast<long>(ranked.size());
  if (ranked.empty()) return out;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const std::size_t rank = gold_rank(ranked[i], answers[i]);
    if (rank == 0) continue;
    out.mrr += 1.0 / static_cast<double>(rank);
    out.hit_at_1 += rank <= 1 ? 1.0 : 0.0;
    out.hit_at_5 += rank <= 5 ? 1.0 : 0.0;
    out.hit_at_10 += rank <= 10 ? 1.0 : 0.0;
  }
  const auto n = static_cast<double>(ranked.size());
  out.mrr /= n;
  out.hit_at_1 /= n;
  out.hit_at_5 /= n;
  out.hit_at_10 /= n;
  return out;
}

double pmi_score(const CooccurrenceIndex &cooc, const std::string &e, const std::string &v) {
  const std::size_t n = cooc.total_passages();
  require(n > 0, "pmi_score: empty corpus");
  const int ce = cooc.count(e);
  const int cv = cooc.count(v);
  const int cev = cooc.pair_count(e, v);
  if (ce == 0 || cv == 0 || cev == 0) return kUnrankable;
  return std::log(static_cast<double>(cev) * static_cast<double>(n) /
                  (static_cast<double>(ce) * static_cast<double>(cv)));
}

double offset_score(std::span<const double> e, std::span<const double> s,
                    std::span<const double> v) {
  require(e.size() == s.size() && s.size() == v.size(), "offset_score: dimension mismatch");
  std::vector<double> sum(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) sum[i] = e[i] + s[i];
  const double denom = norm(sum) * norm(v);
  if (denom == 0.0) return 0.0;
  return dot(sum, v) / denom;
}

double offset_score(const EmbeddingTable &table, const std::string &e, const std::string &s,
                    const std::string &v) {
  auto get = [&](const std::string &key) -> const std::vector<double> & {
    auto it = table.find(key);
    require(it != table.end(), "offset_score: no embedding for '" + key + "'");
    return it->second;
  };
  return offset_score(get(e), get(s), get(v));
}

std::vector<double> text_embedding(const EncoderParams &encoder, const Vocab &vocab,
                                   const std::string &text) {
  const auto tokens = tokenize(vocab, text);
  require(!tokens.empty(), "no embedding for '" + text + "'");
  std::vector<double> m(encoder.dim(), 0.0);
  for (TokenId t : tokens) {
    auto row = encoder.embedding.row(t);
    for (std::size_t c = 0; c < m.size(); ++c) m[c] += row[c];
  }
  for (double &x : m) x /= static_cast<double>(tokens.size());
  return m;
}

double perplexity(const GeneratorParams &gen, std::span<const TokenId> tokens) {
  require(!tokens.empty(), "perplexity: empty text");
  const auto ctx = prepare_context(gen, tokens);
  double nll = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    nll -= log_softmax(generator_logits(gen, ctx, tokens.first(i)))[tokens[i]];
  }
  return std::exp(nll / static_cast<double>(tokens.size()));
}

double perplexity_score(const GeneratorParams &gen, const Vocab &vocab, const std::string &e,
                        const std::string &s, const std::string &v) {
  const auto tokens = tokenize(vocab, e + " " + s + " " + v);
  require(!tokens.empty(), "perplexity: empty text");
  return perplexity(gen, tokens);
}

std::vector<ScoredCandidate> rank_candidates(
    const std::vector<std::string> &candidates,
    const std::function<double(const std::string &)> &score, bool lower_is_better) {
  require(!candidates.empty(), "rank_candidates: no candidates");
  std::vector<ScoredCandidate> out;
  out.reserve(candidates.size());
  for (const auto &c : candidates) out.push_back({c, score(c)});
  std::sort(out.begin(), out.end(), [&](const ScoredCandidate &a, const ScoredCandidate &b) {
    if (a.score != b.score) return lower_is_better ? a.score < b.score : a.score > b.score;
    return a.candidate < b.candidate;
  });
  return out;
}

void write_predictions_jsonl(const std::string &path, const std::vector<Prediction> &preds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  for (const auto &p : preds) {
    ordered_json j;
    j["query_id"] = p.query_id;
    j["answer"] = p.answer;
    j["logprob"] = p.logprob;
    j["provenance"] = p.provenance;
    j["scores"] = p.scores;
    out << j.dump() << '\n';
  }
}

std::vector<Prediction> read_predictions_jsonl(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw StageError("missing predictions file " + path);
  std::vector<Prediction> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Prediction p;
      p.query_id = j.at("query_id").get<std::string>();
      p.answer = j.at("answer").get<std::string>();
      p.logprob = j.at("logprob").get<double>();
      p.provenance = j.at("provenance").get<std::vector<std::string>>();
      p.scores = j.at("scores").get<std::vector<double>>();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception &e) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

KiltEvaluation evaluate_kilt(const std::vector<Prediction> &predictions,
                             const std::vector<SlotInstance> &instances,
                             const std::vector<Passage> &passages) {
  std::unordered_map<std::string, const Prediction *> by_query;
  for (const auto &p : predictions) by_query[p.query_id] = &p;
  std::unordered_map<std::string, const Passage *> by_passage;
  for (const auto &p : passages) by_passage[p.passage_id] = &p;

  KiltEvaluation out;
  std::vector<double> acc, f1, rprec;
  double recall = 0.0;
  for (const auto &inst : instances) {
    auto it = by_query.find(inst.query_id);
    require(it != by_query.end(), "evaluate: no prediction for " + inst.query_id);
    const Prediction &pred = *it->second;
    std::vector<std::vector<ParagraphRef>> lineage;
    for (const auto &pid : pred.provenance) {
      auto pit = by_passage.find(pid);
      require(pit != by_passage.end(), "evaluate: unknown passage " + pid);
      lineage.push_back(pit->second->paragraph_ids);
    }
    InstanceMetrics m;
    m.query_id = inst.query_id;
    m.r_precision = r_precision(lineage, inst.provenance);
    m.recall_at_5 = recall_at_k(lineage, inst.provenance, 5);
    m.accuracy = accuracy(pred.answer, inst.answers);
    m.f1 = token_f1(pred.answer, inst.answers);
    acc.push_back(m.accuracy);
    f1.push_back(m.f1);
    rprec.push_back(m.r_precision);
    recall += m.recall_at_5;
    out.per_instance.push_back(std::move(m));
  }
  auto &r = out.metrics;
  r.n_instances = static_cast<long>(instances.size());
  r.r_precision = mean(rprec);
  r.recall_at_5 = instances.empty() ? 0.0 : recall / static_cast<double>(instances.size());
  r.accuracy = mean(acc);
  r.f1 = mean(f1);
  const auto kilt = kilt_scores(acc, f1, rprec);
  r.kilt_ac = kilt.kilt_ac;
  r.kilt_f1 = kilt.kilt_f1;
  check_report(r);
  return out;
}

RankingEvaluation evaluate_ranking(const std::vector<RankedInstance> &ranked,
                                   const std::vector<SlotInstance> &instances) {
  std::unordered_map<std::string, const RankedInstance *> by_query;
  for (const auto &r : ranked) by_query[r.query_id] = &r;
  std::vector<std::vector<std::string>> lists, answers;
  RankingEvaluation out;
  for (const auto &inst : instances) {
    auto it = by_query.find(inst.query_id);
    require(it != by_query.end(), "evaluate: no ranking for " + inst.query_id);
    lists.push_back(it->second->ranked);
    answers.push_back(inst.answers);
    out.per_instance.emplace_back(inst.query_id, gold_rank(lists.back(), inst.answers));
  }
  out.metrics = mrr_hits(lists, answers);
  check_report(out.metrics);
  return out;
}

std::string report_json(const KiltEvaluation &e) {
  ordered_json j;
  const auto &m = e.metrics;
  j["metrics"] = {{"r_precision", m.r_precision}, {"recall_at_5", m.recall_at_5},
                  {"accuracy", m.accuracy},       {"f1", m.f1},
                  {"kilt_ac", m.kilt_ac},         {"kilt_f1", m.kilt_f1},
                  {"n_instances", m.n_instances}};
  j["per_instance"] = ordered_json::array();
  for (const auto &p : e.per_instance) {
    j["per_instance"].push_back({{"query_id", p.query_id},
                                 {"r_precision", p.r_precision},
                                 {"recall_at_5", p.recall_at_5},
                                 {"accuracy", p.accuracy},
                                 {"f1", p.f1}});
  }
  return j.dump(2) + "\n";
}

std::string report_json(const RankingEvaluation &e) {
  ordered_json j;
  const auto &m = e.metrics;
  j["metrics"] = {{"mrr", m.mrr},
                  {"hit_at_1", m.hit_at_1},
                  {"hit_at_5", m.hit_at_5},
                  {"hit_at_10", m.hit_at_10},
                  {"n_instances", m.n_instances}};
  j["per_instance"] = ordered_json::array();
  for (const auto &[qid, rank] : e.per_instance) {
    j["per_instance"].push_back({{"query_id", qid}, {"gold_rank", rank}});
  }
  return j.dump(2) + "\n";
}

}  // namespace kgi
