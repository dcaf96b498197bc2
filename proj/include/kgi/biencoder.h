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

#ifndef KGI_BIENCODER_H_
#define KGI_BIENCODER_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kgi/common.h"
#include "kgi/corpus.h"
#include "kgi/optimizer.h"
#include "kgi/sparse_index.h"

namespace kgi {

// Embedding-bag encoder: v = W * mean(E[tokens]) + bias.
struct EncoderParams {
  Matrix embedding;   // |V| x d
  Matrix projection;  // d x d
  std::vector<double> bias;

  std::size_t dim() const { return projection.rows; }
  std::size_t vocab_size() const { return embedding.rows; }
  bool operator==(const EncoderParams &) const = default;

  // Same-shaped zero tensor, used as a gradient accumulator.
  EncoderParams zeros_like() const;
  void set_zero();
  std::vector<ParamView> views(const EncoderParams &grads);
};

struct EncoderPair {
  EncoderParams query_encoder;
  EncoderParams context_encoder;
  bool operator==(const EncoderPair &) const = default;
};

EncoderParams init_encoder(std::size_t vocab_size, std::size_t dim, uint64_t seed);
// Both towers start from the same initialization.
EncoderPair init_encoder_pair(std::size_t vocab_size, std::size_t dim, uint64_t seed);

std::vector<double> encode(const EncoderParams &params, std::span<const TokenId> tokens);
// Accumulates d(loss)/d(params) into grads given upstream d(loss)/dv.
void encode_backward(const EncoderParams &params, std::span<const TokenId> tokens,
                     std::span<const double> dv, EncoderParams &grads);

struct DprLossResult {
  double loss = 0.0;
  Matrix d_query;
  Matrix d_positive;
  Matrix d_negative;
};

// In-batch softmax NLL: every query scores all B positives and B hard
// negatives; row i's target is positive i.
DprLossResult dpr_loss(const Matrix &queries, const Matrix &positives, const Matrix &negatives);

struct DprExample {
  std::vector<TokenId> query;
  std::vector<TokenId> positive;
  std::vector<TokenId> negative;
};

std::vector<DprExample> make_dpr_examples(const std::vector<DprTriple> &triples,
                                          const std::vector<Passage> &passages,
                                          const std::vector<SlotInstance> &instances,
                                          const Vocab &vocab);

struct DprTrainResult {
  EncoderPair encoders;
  std::vector<double> epoch_losses;
};

// Loss and gradients for one batch; exposed for gradient checks.
double dpr_batch_loss(const EncoderPair &encoders, std::span<const DprExample> batch,
                      EncoderPair *grads);

DprTrainResult train_dpr(const std::vector<DprExample> &examples, const EncoderPair &encoders,
                         const TrainConfig &config);

void save_encoder(const std::string &path, const EncoderParams &params,
                  const std::string &vocab_hash);
EncoderParams load_encoder(const std::string &path, const std::string &expected_vocab_hash);

}  // namespace kgi

#endif  // KGI_BIENCODER_H_
