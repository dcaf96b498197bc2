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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "kgi/biencoder.h"
#include "kgi/common.h"
#include "kgi/corpus.h"
#include "kgi/dense_index.h"
#include "kgi/evalkit.h"
#include "kgi/pipeline.h"
#include "kgi/rag.h"
#include "kgi/sparse_index.h"
#include "kgi/synth.h"
#include "test_util.h"

namespace kgi {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename... Args>
std::string fmt(const char *format, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string &name, const Outcome &o) {
  std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

void run(int id, const std::string &name, const std::function<Outcome()> &body) {
  try {
    report(id, name, body());
  } catch (const std::exception &e) {
    report(id, name, {false, std::string("exception: ") + e.what()});
  }
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

constexpr double kFdStep = 1e-5;
constexpr double kGradFloor = 1e-6;

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;

  void against(std::vector<double> &values, const std::vector<double> &analytic,
               const std::function<double()> &f) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double fd = central_difference(values, i, f, kFdStep);
      max_rel = std::max(max_rel, relative_error(analytic[i], fd, kGradFloor));
      ++checked;
    }
  }
};

EncoderParams random_encoder(Rng &rng, std::size_t vocab, std::size_t dim) {
  EncoderParams p = init_encoder(vocab, dim, rng.next());
  for (double &x : p.embedding.data) x = rng.uniform(-1, 1);
  for (double &x : p.projection.data) x = rng.uniform(-1, 1);
  for (double &x : p.bias) x = rng.uniform(-0.5, 0.5);
  return p;
}

GeneratorParams random_generator(Rng &rng, std::size_t vocab, std::size_t dim) {
  GeneratorParams g = init_generator(vocab, dim, rng.next());
  for (auto *m : {&g.token_embedding, &g.context_projection, &g.prefix_projection, &g.output}) {
    for (double &x : m->data) x = rng.uniform(-1, 1);
  }
  g.copy_bonus = rng.uniform(-1, 1);
  return g;
}

std::vector<TokenId> random_tokens(Rng &rng, std::size_t vocab, std::size_t max_len,
                                   TokenId lowest = 0) {
  std::vector<TokenId> out(1 + rng.below(max_len));
  for (auto &t : out) t = lowest + static_cast<TokenId>(rng.below(vocab - lowest));
  return out;
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  Rng rng(20261);
  constexpr int kConfigs = 24;
  GradCheck dpr, rag;
  for (int c = 0; c < kConfigs; ++c) {
    const std::size_t batch = 1 + rng.below(4), dim = 1 + rng.below(8);
    const std::size_t vocab = 6 + rng.below(27);
    EncoderPair enc{random_encoder(rng, vocab, dim), random_encoder(rng, vocab, dim)};
    std::vector<DprExample> examples;
    for (std::size_t i = 0; i < batch; ++i) {
      examples.push_back({random_tokens(rng, vocab, 4), random_tokens(rng, vocab, 4),
                          random_tokens(rng, vocab, 4)});
    }
    EncoderPair grads{enc.query_encoder.zeros_like(), enc.context_encoder.zeros_like()};
    dpr_batch_loss(enc, examples, &grads);
    auto f = [&] { return dpr_batch_loss(enc, examples, nullptr); };
    for (auto [p, g] : {std::pair{&enc.query_encoder, &grads.query_encoder},
                        std::pair{&enc.context_encoder, &grads.context_encoder}}) {
      dpr.against(p->embedding.data, g->embedding.data, f);
      dpr.against(p->projection.data, g->projection.data, f);
      dpr.against(p->bias, g->bias, f);
    }

    // The retrieved set covers the whole index so perturbations cannot swap members.
    const std::size_t n_pass = 1 + rng.below(4);
    VectorMatrix vectors;
    vectors.dim = dim;
    PassageTokens ptoks;
    for (std::size_t j = 0; j < n_pass; ++j) {
      std::vector<double> v(dim);
      for (double &x : v) x = rng.uniform(-1, 1);
      vectors.append("p" + std::to_string(j), v);
      ptoks.push_back(random_tokens(rng, vocab, 4, Vocab::kNumReserved));
    }
    DenseIndexConfig exact;
    exact.use_hnsw = false;
    const DenseIndex index(vectors, exact);
    const std::size_t dg = 1 + rng.below(8);
    auto gen = random_generator(rng, vocab, dg);
    RagExample ex{random_tokens(rng, vocab, 3, Vocab::kNumReserved),
                  random_tokens(rng, vocab, 3, Vocab::kNumReserved)};
    ex.target.push_back(Vocab::kEos);
    auto q = random_encoder(rng, vocab, dim);
    auto qg = q.zeros_like();
    auto gg = gen.zeros_like();
    rag_nll_loss(q, gen, ex, index, ptoks, n_pass, &qg, &gg);
    auto fr = [&] { return rag_nll_loss(q, gen, ex, index, ptoks, n_pass, nullptr, nullptr); };
    rag.against(q.embedding.data, qg.embedding.data, fr);
    rag.against(q.projection.data, qg.projection.data, fr);
    rag.against(q.bias, qg.bias, fr);
    rag.against(gen.token_embedding.data, gg.token_embedding.data, fr);
    rag.against(gen.context_projection.data, gg.context_projection.data, fr);
    rag.against(gen.prefix_projection.data, gg.prefix_projection.data, fr);
    rag.against(gen.output.data, gg.output.data, fr);
    std::vector<double> bonus{gen.copy_bonus};
    rag.against(bonus, {gg.copy_bonus}, [&] {
      gen.copy_bonus = bonus[0];
      return fr();
    });
    gen.copy_bonus = bonus[0];
  }
  const double elapsed = seconds_since(t0);
  Outcome o;
  o.pass = dpr.max_rel < 1e-4 && rag.max_rel < 1e-4 && elapsed < 30.0;
  o.detail = fmt("%d configs, dpr max rel err %.2e over %zu params, rag max rel err %.2e over ",
                 kConfigs, dpr.max_rel, dpr.checked, rag.max_rel) +
             fmt("%zu params, %.2f s (< 30 s)", rag.checked, elapsed);
  return o;
}

// ---------------------------------------------------------------------------
// 2. Distribution validity

Outcome distribution_validity() {
  const auto t0 = Clock::now();
  Rng rng(2);
  double worst_sum = 0.0, min_entry = 1.0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t k = 1 + rng.below(8), v = 1 + rng.below(100);
    const double scale = c % 10 == 0 ? 200.0 : 5.0;
    std::vector<double> z(k);
    for (double &x : z) x = rng.uniform(-scale, scale);
    Matrix logits(k, v);
    for (double &x : logits.data) x = rng.uniform(-scale, scale);
    const auto p = marginal_next_token(z, logits);
    double s = 0.0;
    for (double x : p) {
      s += x;
      min_entry = std::min(min_entry, x);
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
  const double elapsed = seconds_since(t0);
  return {worst_sum <= 1e-9 && min_entry >= 0.0 && elapsed < 5.0,
          fmt("1000 cases, max |sum-1| %.2e, min entry %.2e, %.3f s (< 5 s)", worst_sum, min_entry,
              elapsed)};
}

// ---------------------------------------------------------------------------
// 4. ANN oracle

VectorMatrix random_unit_vectors(std::size_t n, std::size_t dim, uint64_t seed) {
  Rng rng(seed);
  VectorMatrix m;
  m.dim = dim;
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (double &x : v) x = rng.normal();
    const double len = norm(v);
    for (double &x : v) x /= len;
    char id[16];
    std::snprintf(id, sizeof id, "v%05zu", i);
    m.append(id, v);
  }
  return m;
}

Outcome ann_oracle() {
  const auto t0 = Clock::now();
  constexpr std::size_t kN = 10000, kDim = 64, kQueries = 200;
  auto vectors = std::make_shared<const VectorMatrix>(random_unit_vectors(kN, kDim, 4));
  const auto queries = random_unit_vectors(kQueries, kDim, 5);
  const auto graph = build_hnsw(vectors, 16, 200, 1234);
  graph.check_invariants();
  double hits = 0, exact_hits = 0;
  std::size_t exact_total = 0;
  for (std::size_t i = 0; i < kQueries; ++i) {
    const auto want = exact_search(*vectors, queries.row(i), 10);
    std::set<std::size_t> truth;
    for (const auto &r : want) truth.insert(r.index);
    for (const auto &r : hnsw_search(graph, queries.row(i), 10, 128)) hits += truth.count(r.index);
    if (i < 20) {
      for (const auto &r : hnsw_search(graph, queries.row(i), 10, kN)) {
        exact_hits += truth.count(r.index);
      }
      exact_total += 10;
    }
  }
  const double recall = hits / (10.0 * kQueries);
  const double full_recall = exact_hits / static_cast<double>(exact_total);

  DenseIndexConfig flat;
  flat.use_hnsw = false;
  DenseIndexConfig sharded = flat;
  sharded.shards = 4;
  const DenseIndex one(*vectors, flat), four(*vectors, sharded);
  int mismatches = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto a = one.search(queries.row(i), 10), b = four.search(queries.row(i), 10);
    std::vector<std::string> ia, ib;
    for (const auto &r : a) ia.push_back(r.passage_id);
    for (const auto &r : b) ib.push_back(r.passage_id);
    mismatches += ia != ib;
  }
  const double elapsed = seconds_since(t0);
  return {recall >= 0.95 && full_recall == 1.0 && mismatches == 0 && elapsed < 120.0,
          fmt("recall@10 %.4f (>= 0.95), efS=n recall %.4f (== 1), sharded/unsharded mismatches "
              "%d/100, %.1f s (< 120 s)",
              recall, full_recall, mismatches, elapsed)};
}

// ---------------------------------------------------------------------------
// 5. Quantization bounds

Outcome quantization_bounds() {
  Rng rng(5);
  constexpr std::size_t kN = 1000, kDim = 32;
  VectorMatrix m;
  m.dim = kDim;
  std::vector<double> v(kDim);
  for (std::size_t i = 0; i < kN; ++i) {
    for (std::size_t j = 0; j < kDim; ++j) v[j] = rng.normal() * (1.0 + static_cast<double>(j));
    m.append("x" + std::to_string(i), v);
  }
  const auto codes = quantize(m);
  const auto back = dequantize(codes);
  long coord_violations = 0, ip_violations = 0;
  double worst_coord = -1e300, worst_ip = -1e300;
  for (std::size_t i = 0; i < kN; ++i) {
    std::vector<double> q(kDim);
    for (double &x : q) x = rng.uniform(-2, 2);
    double bound = 0.0;
    for (std::size_t j = 0; j < kDim; ++j) {
      const double err = std::abs(back.row(i)[j] - m.row(i)[j]);
      const double allowed = codes.steps[j] / 2 + 1e-12;
      worst_coord = std::max(worst_coord, err - allowed);
      coord_violations += err > allowed;
      bound += std::abs(q[j]) * codes.steps[j] / 2;
    }
    const double diff = std::abs(dot(q, back.row(i)) - dot(q, m.row(i)));
    worst_ip = std::max(worst_ip, diff - (bound + 1e-12));
    ip_violations += diff > bound + 1e-12;
  }
  return {coord_violations == 0 && ip_violations == 0,
          fmt("1000 pairs, coordinate violations %ld (max slack %.2e), inner-product violations "
              "%ld (max slack %.2e)",
              coord_violations, worst_coord, ip_violations, worst_ip)};
}

// ---------------------------------------------------------------------------
// 6. Metric oracles

Outcome metric_oracles() {
  std::vector<std::string> failed;
  auto expect = [&](const char *what, double got, double want, double tol) {
    if (!(std::abs(got - want) <= tol)) failed.push_back(what);
  };
  expect("token_f1", token_f1("barack obama", {"obama"}), 2.0 / 3.0, 1e-12);
  const std::vector<double> acc{1, 1}, f1{1, 1}, rp{1, 0};
  expect("kilt_ac", kilt_scores(acc, f1, rp).kilt_ac, 0.5, 1e-12);
  {
    std::vector<Passage> ps;
    for (int i = 0; i < 4; ++i) ps.push_back({"p" + std::to_string(i), "d", "", "t", {{"d", i}}});
    const auto cooc = build_cooccurrence_index(ps, {{"e", "v"}, {"e", "v"}, {}, {}});
    expect("pmi", pmi_score(cooc, "e", "v"), std::log(2.0), 1e-12);
  }
  {
    const auto r = mrr_hits({{"x", "gold"}}, {{"gold"}});
    expect("mrr", r.mrr, 0.5, 1e-12);
    expect("hit@1", r.hit_at_1, 0.0, 1e-12);
    expect("hit@5", r.hit_at_5, 1.0, 1e-12);
  }
  expect("r_precision",
         r_precision({{{"d", 1}}, {{"d", 3}}}, {{"d", 1}, {"d", 2}}), 0.5, 1e-12);
  double bm25 = 0.0;
  {
    const auto index = build_bm25_index({{"a:0", "a", "", "a b", {{"a", 0}}}});
    const auto hits = bm25_search(index, "a", 1);
    bm25 = hits.empty() ? 0.0 : hits[0].score;
    const double k1 = index.params().k1;
    expect("bm25", bm25, std::log(4.0 / 3.0) * (k1 + 1) / (1 + k1), 1e-9);
  }
  Outcome o;
  o.pass = failed.empty();
  o.detail = fmt("token_f1 2/3, kilt_ac 0.5, pmi ln 2, mrr 0.5, r_precision 0.5, bm25 %.12f", bm25);
  for (const auto &f : failed) o.detail += " [failed " + f + "]";
  return o;
}

// ---------------------------------------------------------------------------
// 7. Constrained-decoding completeness

// Masked and renormalized over trie children at every step.
double exhaustive_constrained_score(const GeneratorParams &gen, const RetrievedContext &ctx,
                                    const PrefixTrie &trie, const std::vector<TokenId> &seq) {
  double total = 0.0;
  uint32_t node = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto lm = context_log_marginal(gen, ctx, std::span(seq).first(i));
    double mass = 0.0;
    for (const auto &[t, child] : trie.node(node).children) mass += std::exp(lm[t]);
    total += lm[seq[i]] - std::log(mass);
    node = trie.node(node).children.at(seq[i]);
  }
  return total;
}

Outcome constrained_completeness() {
  Rng rng(77);
  int mismatched = 0;
  std::size_t total_candidates = 0;
  for (int c = 0; c < 50; ++c) {
    const std::size_t words = 3 + rng.below(10);
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < words; ++i) tokens.push_back("w" + std::to_string(i));
    const Vocab vocab(tokens);
    auto gen = random_generator(rng, vocab.size(), 2 + rng.below(6));
    std::vector<std::string> cands;
    const std::size_t n_cands = 2 + rng.below(9);
    for (std::size_t i = 0; i < n_cands; ++i) {
      std::string s;
      const std::size_t len = 1 + rng.below(3);
      for (std::size_t j = 0; j < len; ++j) s += (j ? " " : "") + tokens[rng.below(words)];
      cands.push_back(s);
    }
    const auto trie = build_prefix_trie(cands, vocab);
    std::size_t longest = 0;
    for (const auto &s : trie.sequences()) longest = std::max(longest, s.size());
    const std::size_t k = 1 + rng.below(4);
    std::vector<std::vector<TokenId>> passages;
    std::vector<double> z;
    for (std::size_t j = 0; j < k; ++j) {
      passages.push_back(random_tokens(rng, vocab.size(), 4, Vocab::kNumReserved));
      z.push_back(rng.uniform(-2, 2));
    }
    const auto ctx = fixed_context(gen, z, passages,
                                   random_tokens(rng, vocab.size(), 3, Vocab::kNumReserved));
    const auto hyps = beam_search(gen, ctx, trie.candidates().size(), longest, &trie);

    std::vector<std::pair<double, std::size_t>> brute;
    for (std::size_t i = 0; i < trie.sequences().size(); ++i) {
      brute.push_back({exhaustive_constrained_score(gen, ctx, trie, trie.sequences()[i]), i});
    }
    std::sort(brute.begin(), brute.end(), [&](const auto &a, const auto &b) {
      if (a.first != b.first) return a.first > b.first;
      return trie.sequences()[a.second] < trie.sequences()[b.second];
    });
    bool same = hyps.size() == brute.size();
    for (std::size_t i = 0; same && i < hyps.size(); ++i) {
      same = hyps[i].candidate == static_cast<int>(brute[i].second);
    }
    mismatched += !same;
    total_candidates += brute.size();
  }
  return {mismatched == 0,
          fmt("50 configs, %zu candidates ranked, order mismatches %d", total_candidates,
              mismatched)};
}

// ---------------------------------------------------------------------------
// 3, 8, 9, 10. Trained synthetic system

// Seeded values measured on this build; the band absorbs libm differences
// between platforms.
constexpr double kPinBand = 0.025;
constexpr double kPinUntrained = 0.1175;
constexpr double kPinDprBm25 = 0.1675;
constexpr double kPinDprBm25Rag = 0.2450;
constexpr double kPinDprDnsRag = 0.2650;
constexpr double kPinGold = 0.6400;
constexpr double kPinRandom = 0.0100;
constexpr double kPinHit0 = 0.1050;
constexpr double kPinHit1 = 0.1900;
constexpr double kPinHit4 = 0.5400;

bool pinned(double value, double pin) { return std::abs(value - pin) <= kPinBand; }

struct Workspace {
  TempDir dir;
  RunConfig config;
  std::vector<Document> news_corpus;
  std::vector<SlotInstance> news_train, news_dev;
};

// The wiki benchmark plus a second domain whose words join the vocabulary.
std::unique_ptr<Workspace> make_workspace() {
  auto ws = std::make_unique<Workspace>();
  RunConfig &c = ws->config;
  const std::string root = ws->dir.path();
  c.run_dir = root + "/run";
  c.paths.corpus = root + "/wiki/corpus.jsonl";
  c.paths.train = root + "/wiki/train.jsonl";
  c.paths.dev = root + "/wiki/dev.jsonl";
  c.paths.vocab_corpora = {root + "/news/corpus.jsonl"};
  c.paths.vocab_instances = {root + "/news/train.jsonl", root + "/news/dev.jsonl"};
  write_synthetic_benchmark(generate_synthetic_benchmark(c.synth), root + "/wiki");
  SyntheticSpec news = c.synth;
  news.domain = "news";
  news.n_entities = 200;
  news.seed = 11;
  news.values_per_relation = 4;
  const auto bench = generate_synthetic_benchmark(news);
  write_synthetic_benchmark(bench, root + "/news");
  ws->news_corpus = bench.corpus;
  ws->news_train = bench.train;
  ws->news_dev = bench.dev;
  return ws;
}

std::string encoder_hash(const TempDir &dir, const EncoderParams &e, const Vocab &vocab) {
  const std::string path = dir.file("context_probe.ckpt");
  save_encoder(path, e, vocab.hash());
  return sha256_file(path);
}

struct TrendResults {
  Outcome frozen, trend, evidence, few_shot;
};

TrendResults trained_system() {
  TrendResults out;
  const auto t0 = Clock::now();
  const auto ws = make_workspace();
  const RunConfig &c = ws->config;
  const auto data = prepare_data(c);
  const auto train = capped_train(c, data.train);
  const auto ptoks = tokenize_passages(data.vocab, data.passages);

  bool frozen = true;
  int rag_runs = 0;
  auto rag_with = [&](const EncoderPair &enc, const DenseIndex &index) {
    const std::string before = encoder_hash(ws->dir, enc.context_encoder, data.vocab);
    auto result = train_rag_model(c, train, data.vocab, enc, index, ptoks);
    frozen = frozen && encoder_hash(ws->dir, enc.context_encoder, data.vocab) == before;
    ++rag_runs;
    return result;
  };
  auto rprec = [&](const EncoderParams &q, const DenseIndex &index) {
    return retrieval_r_precision(q, index, data.vocab, data.passages, data.dev, c.k);
  };

  const auto untrained = initial_encoders(c, data.vocab);
  const double rp_untrained =
      rprec(untrained.query_encoder,
            build_serving_index(c, untrained.context_encoder, data.vocab, data.passages));

  const auto bm25 = train_bm25_retriever(c, data.passages, train, data.vocab);
  const auto bm25_index =
      build_serving_index(c, bm25.encoders.context_encoder, data.vocab, data.passages);
  const double rp_bm25 = rprec(bm25.encoders.query_encoder, bm25_index);
  const auto bm25_rag = rag_with(bm25.encoders, bm25_index);
  const double rp_bm25_rag = rprec(bm25_rag.query_encoder, bm25_index);

  const auto dns = train_dns_retriever(c, data.passages, train, data.vocab, bm25.encoders);
  const auto dns_index =
      build_serving_index(c, dns.encoders.context_encoder, data.vocab, data.passages);
  const auto dns_rag = rag_with(dns.encoders, dns_index);
  const double rp_dns_rag = rprec(dns_rag.query_encoder, dns_index);
  const double trend_seconds = seconds_since(t0);

  const bool ordered = rp_untrained < rp_bm25 && rp_bm25 <= rp_bm25_rag &&
                       rp_dns_rag >= std::max({rp_untrained, rp_bm25, rp_bm25_rag}) &&
                       rp_dns_rag - rp_bm25 >= 0.05;
  const bool pins = pinned(rp_untrained, kPinUntrained) && pinned(rp_bm25, kPinDprBm25) &&
                    pinned(rp_bm25_rag, kPinDprBm25Rag) && pinned(rp_dns_rag, kPinDprDnsRag);
  out.trend.pass = ordered && pins && trend_seconds < 600.0;
  out.trend.detail =
      fmt("%zu passages; dev R-Prec untrained %.4f < DPR_BM25 %.4f <= DPR_BM25+RAG %.4f, ",
          data.passages.size(), rp_untrained, rp_bm25, rp_bm25_rag) +
      fmt("DPR_DNS+RAG %.4f is max, gap %.1f pts (>= 5); pins %s (+-%.3f); %.1f s (< 600 s)",
          rp_dns_rag, 100 * (rp_dns_rag - rp_bm25), pins ? "held" : "BROKEN", kPinBand,
          trend_seconds);

  // Context checkpoint bytes before and after every train_rag call.
  out.frozen.pass = frozen && rag_runs == 2;
  out.frozen.detail = fmt("%d train_rag runs, context-encoder checkpoint sha256 unchanged: %s",
                          rag_runs, frozen ? "yes" : "no");

  const auto ev = evidence_accuracy(c, dns_rag.query_encoder, dns_rag.generator, dns_index,
                                    data.passages, ptoks, data.vocab, data.dev, 300);
  out.evidence.pass = ev.gold >= ev.random + 0.20 && pinned(ev.gold, kPinGold) &&
                      pinned(ev.random, kPinRandom);
  out.evidence.detail = fmt("%zu dev instances, accuracy gold %.3f vs random %.3f (gap %.1f pts, "
                            ">= 20), retrieved %.3f",
                            ev.n_instances, ev.gold, ev.random,
                            100 * (ev.gold - ev.random), ev.retrieved);

  // Second domain: index substitution, then n-shot fine-tuning.
  const auto news_passages = segment_documents(ws->news_corpus, c.max_passage_tokens);
  const auto news_tokens = tokenize_passages(data.vocab, news_passages);
  const auto news_index =
      build_serving_index(c, dns.encoders.context_encoder, data.vocab, news_passages);
  const auto candidates = cooccurrence_candidates(ws->news_corpus, news_passages, ws->news_dev);
  auto hit_at_1 = [&](const EncoderParams &q, const GeneratorParams &g) {
    const auto ranked = rank_with_generator(c, q, g, news_index, news_passages, news_tokens,
                                            data.vocab, ws->news_dev, candidates);
    std::vector<RankedInstance> plain;
    for (const auto &r : ranked) plain.push_back(r.ranked);
    return evaluate_ranking(plain, ws->news_dev).metrics.hit_at_1;
  };
  const double hit0 = hit_at_1(dns_rag.query_encoder, dns_rag.generator);
  const EncoderPair served{dns_rag.query_encoder, dns.encoders.context_encoder};
  const auto one = few_shot_adapt(c, ws->news_train, 1, data.vocab, served, dns_rag.generator,
                                  news_index, news_tokens);
  const double hit1 = hit_at_1(one.query_encoder, one.generator);
  const auto four = few_shot_adapt(c, ws->news_train, 4, data.vocab, served, dns_rag.generator,
                                   news_index, news_tokens);
  const double hit4 = hit_at_1(four.query_encoder, four.generator);
  out.few_shot.pass = hit4 > hit1 && hit1 > hit0 && pinned(hit0, kPinHit0) &&
                      pinned(hit1, kPinHit1) && pinned(hit4, kPinHit4);
  out.few_shot.detail =
      fmt("%zu news dev instances, HIT@1 4-shot %.3f > 1-shot %.3f > 0-shot %.3f; pins %s",
          ws->news_dev.size(), hit4, hit1, hit0,
          pinned(hit0, kPinHit0) && pinned(hit1, kPinHit1) && pinned(hit4, kPinHit4) ? "held"
                                                                                    : "BROKEN");
  return out;
}

// ---------------------------------------------------------------------------
// 11. Determinism

std::string full_pipeline_metrics(const std::string &root, bool *context_frozen) {
  RunConfig c;
  c.run_dir = root + "/run";
  c.paths.corpus = root + "/data/corpus.jsonl";
  c.paths.train = root + "/data/train.jsonl";
  c.paths.dev = root + "/data/dev.jsonl";
  stage_synth(c, root + "/data");
  stage_segment(c);
  stage_build_sparse(c);
  stage_mine_negatives(c, "bm25");
  stage_train_dpr(c, "bm25");
  stage_run_dns(c);
  stage_encode_corpus(c);
  stage_build_index(c);
  const std::string ctx = c.run_dir + "/checkpoints/dpr_dns.context.ckpt";
  const std::string idx = c.run_dir + "/index/dense.idx";
  const std::string ctx_before = sha256_file(ctx), idx_before = sha256_file(idx);
  stage_train_rag(c);
  *context_frozen = sha256_file(ctx) == ctx_before && sha256_file(idx) == idx_before;
  stage_predict(c, std::nullopt);
  stage_evaluate(c, "kilt");
  return read_file(c.run_dir + "/reports/metrics.json");
}

Outcome determinism(bool *context_frozen) {
  const auto t0 = Clock::now();
  TempDir a, b;
  bool frozen_a = false, frozen_b = false;
  const std::string ma = full_pipeline_metrics(a.path(), &frozen_a);
  const std::string mb = full_pipeline_metrics(b.path(), &frozen_b);
  *context_frozen = frozen_a && frozen_b;
  return {!ma.empty() && ma == mb,
          fmt("two full runs in separate directories, metrics.json %zu bytes, sha256 ", ma.size()) +
              sha256_hex(ma).substr(0, 16) + (ma == mb ? " == " : " != ") +
              sha256_hex(mb).substr(0, 16) + fmt(", %.1f s", seconds_since(t0))};
}

}  // namespace
}  // namespace kgi

int main() {
  using namespace kgi;
  run(1, "gradient-fidelity", gradient_fidelity);
  run(2, "distribution-validity", distribution_validity);

  TrendResults trend;
  bool trained = false;
  bool stage_frozen = false;
  Outcome det;
  try {
    trend = trained_system();
    trained = true;
  } catch (const std::exception &e) {
    trend.frozen = trend.trend = trend.evidence = trend.few_shot =
        Outcome{false, std::string("exception: ") + e.what()};
  }
  try {
    det = determinism(&stage_frozen);
  } catch (const std::exception &e) {
    det = Outcome{false, std::string("exception: ") + e.what()};
  }
  if (trained) {
    trend.frozen.pass = trend.frozen.pass && stage_frozen;
    trend.frozen.detail += std::string("; train-rag stage kept context checkpoint and index ") +
                           (stage_frozen ? "byte-identical" : "MODIFIED");
  }

  report(3, "frozen-context", trend.frozen);
  run(4, "ann-oracle", ann_oracle);
  run(5, "quantization-bounds", quantization_bounds);
  run(6, "metric-oracles", metric_oracles);
  run(7, "constrained-decoding-completeness", constrained_completeness);
  report(8, "retrieval-trend", trend.trend);
  report(9, "gold-vs-random-evidence", trend.evidence);
  report(10, "few-shot-trend", trend.few_shot);
  report(11, "determinism", det);
  std::printf("%s: %d of 11 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures == 0 ? 0 : 1;
}
