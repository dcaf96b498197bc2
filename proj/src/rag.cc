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

#include "kgi/rag.h"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

namespace kgi {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

[[maybe_unused]] bool is_distribution(const std::vector<double> &p) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= 1e-9;
}

void scale(std::span<double> v, double s) {
  for (double &x : v) x *= s;
}

// Ranked first: higher log prob, then the smaller token sequence.
bool hypothesis_before(const Hypothesis &a, const Hypothesis &b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<double> log_marginal_next_token(std::span<const double> z, const Matrix &seq_logits) {
  require(!z.empty(), "marginal_next_token: k must be >= 1");
  require(seq_logits.rows == z.size(), "marginal_next_token: one logit row per sequence");
  const auto log_prior = log_softmax(z);
  const std::size_t vocab = seq_logits.cols;
  Matrix terms(vocab, z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    const auto logp = log_softmax(seq_logits.row(j));
    for (std::size_t t = 0; t < vocab; ++t) terms.at(t, j) = log_prior[j] + logp[t];
  }
  std::vector<double> out(vocab);
  for (std::size_t t = 0; t < vocab; ++t) out[t] = log_sum_exp(terms.row(t));
  return out;
}

std::vector<double> marginal_next_token(std::span<const double> z, const Matrix &seq_logits) {
  auto out = log_marginal_next_token(z, seq_logits);
  for (double &x : out) x = std::exp(x);
  assert(is_distribution(out));
  return out;
}

PassageTokens tokenize_passages(const Vocab &vocab, const std::vector<Passage> &passages) {
  PassageTokens out;
  out.reserve(passages.size());
  for (const auto &p : passages) out.push_back(tokenize(vocab, passage_encoder_text(p)));
  return out;
}

std::vector<TokenId> rag_input(std::span<const TokenId> passage, std::span<const TokenId> query) {
  std::vector<TokenId> s(passage.begin(), passage.end());
  s.push_back(Vocab::kSep);
  s.insert(s.end(), query.begin(), query.end());
  return s;
}

std::vector<RagExample> make_rag_examples(const std::vector<SlotInstance> &instances,
                                          const Vocab &vocab) {
  std::vector<RagExample> out;
  out.reserve(instances.size());
  for (const auto &inst : instances) {
    require(!inst.answers.empty(), inst.query_id + ": instance has no answer");
    RagExample ex;
    ex.query = tokenize(vocab, render_query(inst.subject, inst.relation));
    ex.target = tokenize(vocab, inst.answers.front());
    require(!ex.target.empty(), inst.query_id + ": answer tokenizes to nothing");
    ex.target.push_back(Vocab::kEos);
    out.push_back(std::move(ex));
  }
  return out;
}

double rag_sequence_nll(std::span<const double> q, const Matrix &passage_vectors,
                        const std::vector<std::vector<TokenId>> &inputs,
                        std::span<const TokenId> target, const GeneratorParams &gen,
                        std::vector<double> *d_query, GeneratorParams *gen_grads) {
  const std::size_t k = passage_vectors.rows;
  require(k >= 1, "rag loss: no passages retrieved");
  require(inputs.size() == k, "rag loss: one input sequence per passage");
  require(passage_vectors.cols == q.size(), "rag loss: query dimension mismatch");
  require(!target.empty(), "rag loss: empty target");

  std::vector<double> z(k);
  for (std::size_t j = 0; j < k; ++j) z[j] = dot(q, passage_vectors.row(j));
  const auto log_prior = log_softmax(z);
  std::vector<GeneratorContext> contexts;
  contexts.reserve(k);
  for (const auto &s : inputs) contexts.push_back(prepare_context(gen, s));

  double loss = 0.0;
  std::vector<double> dz(k, 0.0);
  std::vector<double> joint(k);
  std::vector<std::vector<double>> probs(k);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const TokenId t = target[i];
    require(t < gen.vocab_size(), "rag loss: target token out of range");
    const auto prefix = target.first(i);
    for (std::size_t j = 0; j < k; ++j) {
      probs[j] = log_softmax(generator_logits(gen, contexts[j], prefix));
      joint[j] = log_prior[j] + probs[j][t];
    }
    const double log_pt = log_sum_exp(joint);
    loss -= log_pt;
    for (std::size_t j = 0; j < k; ++j) {
      const double posterior = std::exp(joint[j] - log_pt);
      dz[j] += std::exp(log_prior[j]) - posterior;
      if (gen_grads == nullptr || posterior == 0.0) continue;
      auto &dlogits = probs[j];
      for (double &x : dlogits) x = posterior * std::exp(x);
      dlogits[t] -= posterior;
      generator_backward(gen, contexts[j], prefix, dlogits, *gen_grads);
    }
  }
  if (d_query != nullptr) {
    d_query->assign(q.size(), 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      auto p = passage_vectors.row(j);
      for (std::size_t c = 0; c < q.size(); ++c) (*d_query)[c] += dz[j] * p[c];
    }
  }
  return loss;
}

double rag_nll_loss(const EncoderParams &query_encoder, const GeneratorParams &gen,
                    const RagExample &example, const DenseIndex &serving_index,
                    const PassageTokens &passages, std::size_t k,
                    EncoderParams *query_grads, GeneratorParams *gen_grads,
                    RagLossDetails *details) {
  require(k >= 1, "rag loss: k must be >= 1");
  require(passages.size() == serving_index.size(), "rag loss: passages do not match the index");
  const auto q = encode(query_encoder, example.query);
  const auto retrieved = serving_index.search(q, k);
  require(!retrieved.empty(), "rag loss: no passages retrievable");
  Matrix vectors(retrieved.size(), q.size());
  std::vector<std::vector<TokenId>> inputs;
  for (std::size_t j = 0; j < retrieved.size(); ++j) {
    auto v = serving_index.vector(retrieved[j].index);
    std::copy(v.begin(), v.end(), vectors.row(j).begin());
    inputs.push_back(rag_input(passages[retrieved[j].index], example.query));
  }
  std::vector<double> dq;
  const double loss = rag_sequence_nll(q, vectors, inputs, example.target, gen,
                                       query_grads != nullptr ? &dq : nullptr, gen_grads);
  if (query_grads != nullptr) encode_backward(query_encoder, example.query, dq, *query_grads);
  if (details != nullptr) {
    details->retrieved = retrieved;
    details->z.clear();
    for (std::size_t j = 0; j < retrieved.size(); ++j) {
      details->z.push_back(dot(q, vectors.row(j)));
    }
  }
  return loss;
}

RagTrainResult train_rag(const std::vector<RagExample> &examples, const EncoderPair &encoders,
                         const GeneratorParams &gen, const DenseIndex &serving_index,
                         const PassageTokens &passages, const TrainConfig &config,
                         std::size_t k) {
  require(!examples.empty(), "train_rag: no training instances");
  config.validate();
  require(serving_index.dim() == encoders.context_encoder.dim(),
          "train_rag: serving index dimension does not match the context encoder");
  if (!serving_index.config().quantize && !passages.empty() && !passages[0].empty()) {
    const auto expect = encode(encoders.context_encoder, passages[0]);
    const auto got = serving_index.vector(0);
    require(std::equal(expect.begin(), expect.end(), got.begin()),
            "train_rag: serving index was not encoded with this context encoder");
  }

  RagTrainResult out{encoders.query_encoder, gen, {}};
  EncoderParams q_grads = out.query_encoder.zeros_like();
  GeneratorParams g_grads = out.generator.zeros_like();
  std::vector<ParamView> views = out.query_encoder.views(q_grads);
  for (auto &v : out.generator.views(g_grads)) views.push_back(v);

  OptimizerState state;
  Rng rng(config.seed);
  const std::size_t n = examples.size();
  const long steps_per_epoch = static_cast<long>((n + config.batch_size - 1) / config.batch_size);
  const long total_steps = steps_per_epoch * config.epochs;
  std::vector<std::size_t> order(n);
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      q_grads.set_zero();
      g_grads.set_zero();
      for (std::size_t i = start; i < end; ++i) {
        epoch_loss += rag_nll_loss(out.query_encoder, out.generator, examples[order[i]],
                                   serving_index, passages, k, &q_grads, &g_grads);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      scale(q_grads.embedding.data, inv);
      scale(q_grads.projection.data, inv);
      scale(q_grads.bias, inv);
      scale(g_grads.token_embedding.data, inv);
      scale(g_grads.context_projection.data, inv);
      scale(g_grads.prefix_projection.data, inv);
      scale(g_grads.output.data, inv);
      g_grads.copy_bonus *= inv;
      optimizer_step(views, state, lr_at(step, total_steps, config), config);
      ++step;
    }
    out.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
  }
  return out;
}

std::optional<uint32_t> PrefixTrie::walk(std::span<const TokenId> prefix) const {
  uint32_t node = 0;
  for (TokenId t : prefix) {
    auto it = nodes_[node].children.find(t);
    if (it == nodes_[node].children.end()) return std::nullopt;
    node = it->second;
  }
  return node;
}

PrefixTrie build_prefix_trie(const std::vector<std::string> &candidates, const Vocab &vocab) {
  require(!candidates.empty(), "prefix trie: no candidates");
  PrefixTrie trie;
  for (const auto &cand : candidates) {
    auto seq = tokenize(vocab, cand);
    require(!seq.empty(), "prefix trie: candidate '" + cand + "' tokenizes to nothing");
    seq.push_back(Vocab::kEos);
    uint32_t node = 0;
    bool added = false;
    for (TokenId t : seq) {
      auto it = trie.nodes_[node].children.find(t);
      if (it != trie.nodes_[node].children.end()) {
        node = it->second;
        continue;
      }
      const auto child = static_cast<uint32_t>(trie.nodes_.size());
      trie.nodes_.emplace_back();
      trie.nodes_[node].children.emplace(t, child);
      node = child;
      added = true;
    }
    if (!added) continue;  // duplicate token sequence
    trie.nodes_[node].candidate = static_cast<int>(trie.candidates_.size());
    trie.candidates_.push_back(cand);
    trie.sequences_.push_back(std::move(seq));
  }
  return trie;
}

RetrievedContext fixed_context(const GeneratorParams &gen, std::span<const double> z,
                               const std::vector<std::vector<TokenId>> &passage_tokens,
                               std::span<const TokenId> query) {
  require(!z.empty() && z.size() == passage_tokens.size(),
          "fixed context: one score per passage required");
  RetrievedContext ctx;
  ctx.z.assign(z.begin(), z.end());
  for (const auto &p : passage_tokens) {
    ctx.sequences.push_back(prepare_context(gen, rag_input(p, query)));
  }
  return ctx;
}

RetrievedContext retrieve_context(const EncoderParams &query_encoder,
                                  const GeneratorParams &gen, const DenseIndex &serving_index,
                                  const PassageTokens &passages,
                                  std::span<const TokenId> query, std::size_t k) {
  require(k >= 1, "retrieval: k must be >= 1");
  require(passages.size() == serving_index.size(), "retrieval: passages do not match the index");
  const auto q = encode(query_encoder, query);
  RetrievedContext ctx;
  ctx.retrieved = serving_index.search(q, k);
  require(!ctx.retrieved.empty(), "retrieval: no passages retrievable");
  for (const auto &r : ctx.retrieved) {
    ctx.z.push_back(dot(q, serving_index.vector(r.index)));
    ctx.sequences.push_back(prepare_context(gen, rag_input(passages[r.index], query)));
  }
  return ctx;
}

std::vector<double> context_log_marginal(const GeneratorParams &gen, const RetrievedContext &ctx,
                                         std::span<const TokenId> prefix) {
  Matrix logits(ctx.sequences.size(), gen.vocab_size());
  for (std::size_t j = 0; j < ctx.sequences.size(); ++j) {
    auto row = generator_logits(gen, ctx.sequences[j], prefix);
    std::copy(row.begin(), row.end(), logits.row(j).begin());
  }
  return log_marginal_next_token(ctx.z, logits);
}

double sequence_log_prob(const GeneratorParams &gen, const RetrievedContext &ctx,
                         std::span<const TokenId> tokens) {
  double total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    total += context_log_marginal(gen, ctx, tokens.first(i))[tokens[i]];
  }
  return total;
}

std::vector<Hypothesis> beam_search(const GeneratorParams &gen, const RetrievedContext &ctx,
                                    std::size_t beam, std::size_t max_len,
                                    const PrefixTrie *trie) {
  require(beam >= 1, "beam search: beam must be >= 1");
  require(max_len >= 1, "beam search: max_len must be >= 1");
  require(trie == nullptr || !trie->empty(), "beam search: empty candidate trie");

  struct Live {
    Hypothesis hyp;
    uint32_t node = 0;
  };
  std::vector<Live> live{Live{}};
  std::vector<Hypothesis> finished;
  std::vector<Live> expansions;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    expansions.clear();
    for (const auto &h : live) {
      const auto lm = context_log_marginal(gen, ctx, h.hyp.tokens);
      auto extend = [&](TokenId t, double lp, uint32_t node) {
        Live next = h;
        next.hyp.tokens.push_back(t);
        next.hyp.log_prob = lp;
        next.node = node;
        expansions.push_back(std::move(next));
      };
      if (trie != nullptr) {
        const auto &children = trie->node(h.node).children;
        std::vector<double> allowed;
        for (const auto &[t, child] : children) allowed.push_back(lm[t]);
        const double norm = log_sum_exp(allowed);
        for (const auto &[t, child] : children) {
          extend(t, h.hyp.log_prob + lm[t] - norm, child);
        }
      } else {
        // Only the top `beam` tokens of a hypothesis can survive the cut.
        std::vector<TokenId> tokens;
        for (TokenId t = 0; t < lm.size(); ++t) {
          if (t != Vocab::kPad && t != Vocab::kBos && lm[t] > kNegInf) tokens.push_back(t);
        }
        const std::size_t keep = std::min(beam, tokens.size());
        std::partial_sort(tokens.begin(), tokens.begin() + static_cast<long>(keep), tokens.end(),
                          [&](TokenId a, TokenId b) {
                            if (lm[a] != lm[b]) return lm[a] > lm[b];
                            return a < b;
                          });
        for (std::size_t i = 0; i < keep; ++i) {
          extend(tokens[i], h.hyp.log_prob + lm[tokens[i]], 0);
        }
      }
    }
    std::sort(expansions.begin(), expansions.end(),
              [](const Live &a, const Live &b) { return hypothesis_before(a.hyp, b.hyp); });
    if (expansions.size() > beam) expansions.resize(beam);
    live.clear();
    for (auto &e : expansions) {
      if (e.hyp.tokens.back() == Vocab::kEos) {
        if (trie != nullptr) e.hyp.candidate = trie->node(e.node).candidate;
        finished.push_back(std::move(e.hyp));
      } else {
        live.push_back(std::move(e));
      }
    }
  }
  // Unfinished constrained hypotheses are not candidate strings.
  if (trie == nullptr) {
    for (auto &h : live) finished.push_back(std::move(h.hyp));
  }
  std::sort(finished.begin(), finished.end(), hypothesis_before);
  if (finished.size() > beam) finished.resize(beam);
  return finished;
}

std::vector<Hypothesis> beam_search(const EncoderParams &query_encoder,
                                    const GeneratorParams &gen, const DenseIndex &serving_index,
                                    const PassageTokens &passages,
                                    std::span<const TokenId> query, std::size_t k,
                                    std::size_t beam, std::size_t max_len,
                                    const PrefixTrie *trie) {
  const auto ctx = retrieve_context(query_encoder, gen, serving_index, passages, query, k);
  return beam_search(gen, ctx, beam, max_len, trie);
}

}  // namespace kgi
