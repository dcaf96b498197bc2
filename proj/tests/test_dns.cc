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

#include "kgi/biencoder.h"
#include "kgi/common.h"
#include "kgi/dense_index.h"
#include "kgi/dns.h"
#include "kgi/synth.h"

namespace kgi {
namespace {

struct Fixture {
  std::vector<Passage> passages;
  std::vector<SlotInstance> train;
  Vocab vocab;
  EncoderPair encoders;
};

const Fixture &fixture() {
  static const Fixture f = [] {
    SyntheticSpec spec;
    spec.n_entities = 60;
    spec.values_per_relation = 10;
    const auto bench = generate_synthetic_benchmark(spec);
    Fixture out;
    out.passages = segment_documents(bench.corpus, 12);
    out.train = bench.train;
    std::vector<std::string> extra;
    for (const auto &i : bench.train) extra.push_back(render_query(i.subject, i.relation));
    out.vocab = build_vocab(out.passages, 1, extra);
    out.encoders = init_encoder_pair(out.vocab.size(), 16, 1);
    return out;
  }();
  return f;
}

DnsConfig small_config() {
  DnsConfig c;
  c.extra_epochs = 2;
  c.pool_size = 10;
  c.index.use_hnsw = false;
  c.train.learn_rate = 1e-2;
  c.train.batch_size = 32;
  return c;
}

TEST(DenseMining, MatchesExclusionRulesOverExactResults) {
  const auto &f = fixture();
  const DenseIndex index(encode_corpus(f.encoders.context_encoder, f.vocab, f.passages),
                         DenseIndexConfig{false});
  for (std::size_t i = 0; i < 30; ++i) {
    const auto &inst = f.train[i];
    const auto q = encode(f.encoders.query_encoder,
                          tokenize(f.vocab, render_query(inst.subject, inst.relation)));
    const auto ranked = index.search(q, 10);
    MiningReport a, b;
    const auto want = first_valid_negative(ranked, f.passages, inst, &a);
    const auto got = mine_dense_negative(index, f.encoders.query_encoder, f.vocab, f.passages,
                                         inst, 10, &b);
    EXPECT_EQ(got, want);
    EXPECT_EQ(a.mined, b.mined);
    EXPECT_EQ(a.dropped_gold_overlap, b.dropped_gold_overlap);
    EXPECT_EQ(a.dropped_answer, b.dropped_answer);
  }
}

TEST(DenseMining, TriplesObeyInvariants) {
  const auto &f = fixture();
  const DenseIndex index(encode_corpus(f.encoders.context_encoder, f.vocab, f.passages),
                         DenseIndexConfig{});
  const auto built = mine_dense_triples(index, f.encoders.query_encoder, f.vocab, f.passages,
                                        f.train, 20);
  EXPECT_FALSE(built.triples.empty());
  EXPECT_EQ(built.report.mined + built.report.dropped_exhausted + built.no_positive,
            static_cast<long>(f.train.size()));
  for (const auto &t : built.triples) EXPECT_NO_THROW(check_triple(t, f.passages, f.train));
}

TEST(RunDns, EqualsManualRound) {
  const auto &f = fixture();
  const auto cfg = small_config();
  const auto result = run_dns(f.passages, f.train, f.vocab, f.encoders, cfg);
  ASSERT_EQ(result.rounds.size(), 1u);
  EXPECT_EQ(result.rounds[0].epoch_losses.size(), 2u);

  const DenseIndex index(encode_corpus(f.encoders.context_encoder, f.vocab, f.passages),
                         cfg.index);
  const auto mined = mine_dense_triples(index, f.encoders.query_encoder, f.vocab, f.passages,
                                        f.train, cfg.pool_size);
  TrainConfig train = cfg.train;
  train.epochs = cfg.extra_epochs;
  const auto manual =
      train_dpr(make_dpr_examples(mined.triples, f.passages, f.train, f.vocab), f.encoders, train);
  EXPECT_EQ(result.encoders, manual.encoders);
  EXPECT_EQ(result.rounds[0].mined.triples.size(), mined.triples.size());
}

TEST(RunDns, EachRoundBuildsAFreshIndex) {
  const auto &f = fixture();
  auto cfg = small_config();
  cfg.rounds = 2;
  const uint64_t before = DenseIndex::builds_so_far();
  const auto a = run_dns(f.passages, f.train, f.vocab, f.encoders, cfg);
  ASSERT_EQ(a.rounds.size(), 2u);
  EXPECT_GT(a.rounds[0].index_build_id, before);
  EXPECT_GT(a.rounds[1].index_build_id, a.rounds[0].index_build_id);
  EXPECT_NE(a.encoders.context_encoder, f.encoders.context_encoder);
  const auto b = run_dns(f.passages, f.train, f.vocab, f.encoders, cfg);
  EXPECT_EQ(a.encoders, b.encoders);
}

TEST(RunDns, ShardedIndexMinesTheSameWhenExact) {
  const auto &f = fixture();
  auto one = small_config();
  auto four = small_config();
  four.index.shards = 4;
  EXPECT_EQ(run_dns(f.passages, f.train, f.vocab, f.encoders, one).encoders,
            run_dns(f.passages, f.train, f.vocab, f.encoders, four).encoders);
}

TEST(DnsConfig, Validate) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.rounds = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_config();
  c.pool_size = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_config();
  c.extra_epochs = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

}  // namespace
}  // namespace kgi
