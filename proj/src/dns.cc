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

#include "kgi/dns.h"

#include <algorithm>

namespace kgi {

void DnsConfig::validate() const {
  require(extra_epochs >= 1, "dns: extra_epochs must be >= 1");
  require(rounds >= 1, "dns: rounds must be >= 1");
  require(pool_size >= 1, "dns: pool_size must be >= 1");
  train.validate();
}

std::optional<std::size_t> mine_dense_negative(const DenseIndex &index,
                                               const EncoderParams &query_encoder,
                                               const Vocab &vocab,
                                               const std::vector<Passage> &passages,
                                               const SlotInstance &instance,
                                               std::size_t pool_size, MiningReport *report) {
  const auto q = encode(query_encoder, tokenize(vocab, render_query(instance.subject,
                                                                     instance.relation)));
  const auto ranked = index.search(q, std::min(pool_size, index.size()));
  return first_valid_negative(ranked, passages, instance, report);
}

BuiltTriples mine_dense_triples(const DenseIndex &index, const EncoderParams &query_encoder,
                                const Vocab &vocab, const std::vector<Passage> &passages,
                                const std::vector<SlotInstance> &instances,
                                std::size_t pool_size) {
  BuiltTriples out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto pos = positive_passage(passages, instances[i]);
    if (!pos) {
      ++out.no_positive;
      continue;
    }
    const auto neg = mine_dense_negative(index, query_encoder, vocab, passages, instances[i],
                                         pool_size, &out.report);
    if (!neg) continue;
    DprTriple t{i, *pos, *neg};
    check_triple(t, passages, instances);
    out.triples.push_back(t);
  }
  return out;
}

DnsResult run_dns(const std::vector<Passage> &passages,
                  const std::vector<SlotInstance> &instances, const Vocab &vocab,
                  const EncoderPair &encoders, const DnsConfig &config) {
  config.validate();
  DnsResult out{encoders, {}};
  DenseIndexConfig index_config = config.index;
  index_config.quantize = false;
  TrainConfig train = config.train;
  train.epochs = config.extra_epochs;
  for (int round = 0; round < config.rounds; ++round) {
    DnsRound r;
    std::vector<DprExample> examples;
    {
      const DenseIndex temporary(
          encode_corpus(out.encoders.context_encoder, vocab, passages, config.workers),
          index_config);
      r.index_build_id = temporary.build_id();
      r.mined = mine_dense_triples(temporary, out.encoders.query_encoder, vocab, passages,
                                   instances, config.pool_size);
    }
    require(!r.mined.triples.empty(), "dns: no instance yielded a dense negative");
    examples = make_dpr_examples(r.mined.triples, passages, instances, vocab);
    auto trained = train_dpr(examples, out.encoders, train);
    out.encoders = std::move(trained.encoders);
    r.epoch_losses = std::move(trained.epoch_losses);
    out.rounds.push_back(std::move(r));
  }
  return out;
}

}  // namespace kgi
