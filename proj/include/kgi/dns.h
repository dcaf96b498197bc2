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

#ifndef KGI_DNS_H_
#define KGI_DNS_H_

#include <cstdint>
#include <optional>
#include <vector>

#include "kgi/biencoder.h"
#include "kgi/corpus.h"
#include "kgi/dense_index.h"
#include "kgi/optimizer.h"
#include "kgi/sparse_index.h"

namespace kgi {

struct DnsConfig {
  int extra_epochs = 2;
  std::size_t pool_size = 20;
  int rounds = 1;
  // Temporary index; always built unquantized.
  DenseIndexConfig index;
  // Retraining hyperparameters; epochs is replaced by extra_epochs.
  TrainConfig train;
  std::size_t workers = 1;

  void validate() const;
};

// Same exclusion rules as BM25 mining, over the top pool_size ANN results
// for the rendered query.
std::optional<std::size_t> mine_dense_negative(const DenseIndex &index,
                                               const EncoderParams &query_encoder,
                                               const Vocab &vocab,
                                               const std::vector<Passage> &passages,
                                               const SlotInstance &instance,
                                               std::size_t pool_size,
                                               MiningReport *report = nullptr);

BuiltTriples mine_dense_triples(const DenseIndex &index, const EncoderParams &query_encoder,
                                const Vocab &vocab, const std::vector<Passage> &passages,
                                const std::vector<SlotInstance> &instances,
                                std::size_t pool_size);

struct DnsRound {
  uint64_t index_build_id = 0;  // the temporary index, gone once the round ends
  BuiltTriples mined;
  std::vector<double> epoch_losses;
};

struct DnsResult {
  EncoderPair encoders;
  std::vector<DnsRound> rounds;
};

// Each round: encode, build a temporary index, mine, retrain, discard.
// The caller re-encodes the corpus with the returned context encoder.
DnsResult run_dns(const std::vector<Passage> &passages,
                  const std::vector<SlotInstance> &instances, const Vocab &vocab,
                  const EncoderPair &encoders, const DnsConfig &config);

}  // namespace kgi

#endif  // KGI_DNS_H_
