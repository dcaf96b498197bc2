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

#ifndef KGI_RAG_H_
#define KGI_RAG_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgi/biencoder.h"
#include "kgi/common.h"
#include "kgi/corpus.h"
#include "kgi/dense_index.h"
#include "kgi/optimizer.h"

namespace kgi {

// Toy conditional generator:
//   c = Wc * mean(G[input]);  h = c + Wp * mean(G[BOS, prefix...])
//   logits = U * h + copy_bonus * [token in input]
struct GeneratorParams {
  Matrix token_embedding;     // G: |V| x dg
  Matrix context_projection;  // Wc: dg x dg
  Matrix prefix_projection;   // Wp: dg x dg
  Matrix output;              // U: |V| x dg
  double copy_bonus = 0.0;

  std::size_t dim() const { return context_projection.rows; }
  std::size_t vocab_size() const { return output.rows; }
  bool operator==(const GeneratorParams &) const = default;

  GeneratorParams zeros_like() const;
  void set_zero();
  std::vector<ParamView> views(const GeneratorParams &grads);
};

GeneratorParams init_generator(std::size_t vocab_size, std::size_t dim, uint64_t seed);

// Input-dependent part of the generator, shared by every decoding step.
struct GeneratorContext {
  std::vector<TokenId> input;
  std::vector<TokenId> copyable;  // sorted unique input tokens
  std::vector<double> input_mean;
  std::vector<double> context;  // Wc * input_mean
};

GeneratorContext prepare_context(const GeneratorParams &gen, std::span<const TokenId> input_seq);
std::vector<double> generator_logits(const GeneratorParams &gen, const GeneratorContext &ctx,
                                     std::span<const TokenId> prefix);
std::vector<double> generator_logits(const GeneratorParams &gen,
                                     std::span<const TokenId> input_seq,
                                     std::span<const TokenId> prefix);
// Accumulates generator gradients given d(loss)/d(logits).
void generator_backward(const GeneratorParams &gen, const GeneratorContext &ctx,
                        std::span<const TokenId> prefix, std::span<const double> dlogits,
                        GeneratorParams &grads);

// sum_j softmax(z)_j * softmax(seq_logits[j]); rows of seq_logits are sequences.
std::vector<double> marginal_next_token(std::span<const double> z, const Matrix &seq_logits);
// Same mixture in log space.
std::vector<double> log_marginal_next_token(std::span<const double> z, const Matrix &seq_logits);

// Passage tokens (title + text) aligned with the passage list.
using PassageTokens = std::vector<std::vector<TokenId>>;
PassageTokens tokenize_passages(const Vocab &vocab, const std::vector<Passage> &passages);

// s_j = passage tokens + SEP + query tokens.
std::vector<TokenId> rag_input(std::span<const TokenId> passage, std::span<const TokenId> query);

struct RagExample {
  std::vector<TokenId> query;
  std::vector<TokenId> target;  // answer tokens + EOS
};

std::vector<RagExample> make_rag_examples(const std::vector<SlotInstance> &instances,
                                          const Vocab &vocab);

struct RagLossDetails {
  std::vector<RetrievalResult> retrieved;
  std::vector<double> z;
};

// Marginal NLL over a fixed retrieved set. z_j = q . passage_vectors[j]; the
// passage vectors are constants. Gradients go to d_query (w.r.t. q) and gen_grads.
double rag_sequence_nll(std::span<const double> q, const Matrix &passage_vectors,
                        const std::vector<std::vector<TokenId>> &inputs,
                        std::span<const TokenId> target, const GeneratorParams &gen,
                        std::vector<double> *d_query, GeneratorParams *gen_grads);

// Retrieves the top-k passages with the query encoder and returns the loss.
// There is deliberately no context-encoder argument: passage vectors come
// from the index and receive no gradient.
double rag_nll_loss(const EncoderParams &query_encoder, const GeneratorParams &gen,
                    const RagExample &example, const DenseIndex &serving_index,
                    const PassageTokens &passages, std::size_t k,
                    EncoderParams *query_grads, GeneratorParams *gen_grads,
                    RagLossDetails *details = nullptr);

struct RagTrainResult {
  EncoderParams query_encoder;
  GeneratorParams generator;
  std::vector<double> epoch_losses;
};

RagTrainResult train_rag(const std::vector<RagExample> &examples, const EncoderPair &encoders,
                         const GeneratorParams &gen, const DenseIndex &serving_index,
                         const PassageTokens &passages, const TrainConfig &config,
                         std::size_t k);

// Trie over EOS-terminated token sequences of allowed candidates.
class PrefixTrie {
 public:
  struct Node {
    std::map<TokenId, uint32_t> children;
    int candidate = -1;  // set on EOS leaves
  };

  bool empty() const { return candidates_.empty(); }
  const Node &node(uint32_t id) const { return nodes_[id]; }
  std::size_t num_nodes() const { return nodes_.size(); }
  // Node reached by following prefix from the root, if any.
  std::optional<uint32_t> walk(std::span<const TokenId> prefix) const;
  const std::vector<std::string> &candidates() const { return candidates_; }
  const std::vector<std::vector<TokenId>> &sequences() const { return sequences_; }

  friend PrefixTrie build_prefix_trie(const std::vector<std::string> &candidates,
                                      const Vocab &vocab);

 private:
  std::vector<Node> nodes_{Node{}};
  std::vector<std::string> candidates_;
  std::vector<std::vector<TokenId>> sequences_;  // includes EOS
};

PrefixTrie build_prefix_trie(const std::vector<std::string> &candidates, const Vocab &vocab);

// Retrieval fixed once per query: log P(s_j) and per-sequence contexts.
struct RetrievedContext {
  std::vector<RetrievalResult> retrieved;
  std::vector<double> z;
  std::vector<GeneratorContext> sequences;
};

RetrievedContext retrieve_context(const EncoderParams &query_encoder,
                                  const GeneratorParams &gen, const DenseIndex &serving_index,
                                  const PassageTokens &passages,
                                  std::span<const TokenId> query, std::size_t k);
// Same, with explicit passages (gold/random evidence experiments).
RetrievedContext fixed_context(const GeneratorParams &gen, std::span<const double> z,
                               const std::vector<std::vector<TokenId>> &passage_tokens,
                               std::span<const TokenId> query);

std::vector<double> context_log_marginal(const GeneratorParams &gen, const RetrievedContext &ctx,
                                         std::span<const TokenId> prefix);
// Unconstrained log P(tokens) under the marginal, teacher forced.
double sequence_log_prob(const GeneratorParams &gen, const RetrievedContext &ctx,
                         std::span<const TokenId> tokens);

struct Hypothesis {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  int candidate = -1;  // trie candidate index when decoding is constrained
};

// Length-capped beam search over the marginal next-token distribution.
// max_len caps the hypothesis length including EOS.
std::vector<Hypothesis> beam_search(const GeneratorParams &gen, const RetrievedContext &ctx,
                                    std::size_t beam, std::size_t max_len,
                                    const PrefixTrie *trie);
std::vector<Hypothesis> beam_search(const EncoderParams &query_encoder,
                                    const GeneratorParams &gen, const DenseIndex &serving_index,
                                    const PassageTokens &passages,
                                    std::span<const TokenId> query, std::size_t k,
                                    std::size_t beam, std::size_t max_len,
                                    const PrefixTrie *trie);

void save_generator(const std::string &path, const GeneratorParams &gen,
                    const std::string &vocab_hash);
GeneratorParams load_generator(const std::string &path, const std::string &expected_vocab_hash);

}  // namespace kgi

#endif  // KGI_RAG_H_
