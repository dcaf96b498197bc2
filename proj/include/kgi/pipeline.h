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

#ifndef KGI_PIPELINE_H_
#define KGI_PIPELINE_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgi/biencoder.h"
#include "kgi/corpus.h"
#include "kgi/dense_index.h"
#include "kgi/dns.h"
#include "kgi/evalkit.h"
#include "kgi/optimizer.h"
#include "kgi/rag.h"
#include "kgi/synth.h"

namespace kgi {

struct RunPaths {
  std::string corpus = "data/corpus.jsonl";
  std::string train = "data/train.jsonl";
  std::string dev = "data/dev.jsonl";
  // Extra corpora and instance files whose words join the vocabulary, so
  // a corpus served later by `adapt` does not collapse to UNK.
  std::vector<std::string> vocab_corpora;
  std::vector<std::string> vocab_instances;
};

struct DnsSettings {
  int extra_epochs = 2;
  std::size_t pool_size = 20;
  int rounds = 1;
  double learn_rate = 3e-2;
  std::size_t batch_size = 128;
  std::size_t shards = 4;  // temporary mining index
};

// Everything a run depends on. Stage seeds are derived from `seed`.
struct RunConfig {
  std::string run_dir = "run";
  RunPaths paths;
  std::size_t max_passage_tokens = 12;
  int min_freq = 1;
  std::size_t d = 64;
  std::size_t d_g = 64;
  std::size_t bm25_pool = 20;
  TrainConfig dpr;
  DnsSettings dns;
  TrainConfig rag;
  TrainConfig few_shot;
  DenseIndexConfig index;
  std::size_t k = 5;
  std::size_t beam = 4;
  std::size_t max_len = 6;
  std::size_t workers = 4;
  std::string retriever = "dns";  // "untrained", "bm25" or "dns"
  long max_train_instances = 0;  // 0 keeps every instance
  uint64_t seed = 1;
  SyntheticSpec synth;

  RunConfig();
  void validate() const;

  uint64_t encoder_seed() const { return seed; }
  uint64_t dpr_seed() const { return seed + 2; }
  uint64_t rag_seed() const { return seed + 3; }
  uint64_t generator_seed() const { return seed + 4; }
  uint64_t few_shot_seed() const { return seed + 4; }
  uint64_t evidence_seed() const { return seed + 8; }
  uint64_t index_seed() const { return seed + 1233; }

  TrainConfig dpr_config() const;
  DnsConfig dns_config() const;
  TrainConfig rag_config() const;
  TrainConfig few_shot_config() const;
  DenseIndexConfig index_config() const;
};

nlohmann::ordered_json config_to_json(const RunConfig &config);
// Keys absent from the document keep their defaults; unknown keys are errors.
RunConfig config_from_json(const nlohmann::ordered_json &doc);
// "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::ordered_json &doc, const std::string &assignment);
RunConfig load_run_config(const std::optional<std::string> &path,
                          const std::vector<std::string> &overrides);

// ---------------------------------------------------------------------------
// In-memory building blocks shared by the stages and the experiments.

struct PreparedData {
  std::vector<Document> corpus;
  std::vector<SlotInstance> train;
  std::vector<SlotInstance> dev;
  std::vector<Passage> passages;
  Vocab vocab;
};

// Reads the configured files, segments the corpus and builds the vocabulary.
PreparedData prepare_data(const RunConfig &config);
Vocab build_run_vocab(const RunConfig &config, const std::vector<Passage> &passages,
                      const std::vector<SlotInstance> &train,
                      const std::vector<SlotInstance> &dev);
std::vector<SlotInstance> capped_train(const RunConfig &config,
                                       const std::vector<SlotInstance> &train);

EncoderPair initial_encoders(const RunConfig &config, const Vocab &vocab);
DprTrainResult train_bm25_retriever(const RunConfig &config, const std::vector<Passage> &passages,
                                    const std::vector<SlotInstance> &train, const Vocab &vocab,
                                    BuiltTriples *mined = nullptr);
DnsResult train_dns_retriever(const RunConfig &config, const std::vector<Passage> &passages,
                              const std::vector<SlotInstance> &train, const Vocab &vocab,
                              const EncoderPair &start);
DenseIndex build_serving_index(const RunConfig &config, const EncoderParams &context_encoder,
                               const Vocab &vocab, const std::vector<Passage> &passages);
RagTrainResult train_rag_model(const RunConfig &config, const std::vector<SlotInstance> &train,
                               const Vocab &vocab, const EncoderPair &encoders,
                               const DenseIndex &index, const PassageTokens &passage_tokens);
RagTrainResult few_shot_adapt(const RunConfig &config, const std::vector<SlotInstance> &train,
                              std::size_t n_per_relation, const Vocab &vocab,
                              const EncoderPair &encoders, const GeneratorParams &gen,
                              const DenseIndex &index, const PassageTokens &passage_tokens);

// Mean R-Precision of top-k dense retrieval over instances.
double retrieval_r_precision(const EncoderParams &query_encoder, const DenseIndex &index,
                             const Vocab &vocab, const std::vector<Passage> &passages,
                             const std::vector<SlotInstance> &instances, std::size_t k);

using CandidateMap = std::map<std::string, std::vector<std::string>>;  // query_id -> candidates

// Entities sharing a passage with each instance's subject.
CandidateMap cooccurrence_candidates(const std::vector<Document> &docs,
                                     const std::vector<Passage> &passages,
                                     const std::vector<SlotInstance> &instances);
void write_candidates_jsonl(const std::string &path, const CandidateMap &candidates);
CandidateMap read_candidates_jsonl(const std::string &path);

// Free generation with retrieved evidence.
std::vector<Prediction> predict_answers(const RunConfig &config, const EncoderParams &query_encoder,
                                        const GeneratorParams &gen, const DenseIndex &index,
                                        const std::vector<Passage> &passages,
                                        const PassageTokens &passage_tokens, const Vocab &vocab,
                                        const std::vector<SlotInstance> &instances);

struct RankedPrediction {
  RankedInstance ranked;
  std::vector<double> scores;  // log-probabilities, aligned with ranked
  std::vector<std::string> provenance;
};

// Candidate-constrained beam search with the beam covering every candidate,
// so the result is a full ranking.
std::vector<RankedPrediction> rank_with_generator(
    const RunConfig &config, const EncoderParams &query_encoder, const GeneratorParams &gen,
    const DenseIndex &index, const std::vector<Passage> &passages,
    const PassageTokens &passage_tokens, const Vocab &vocab,
    const std::vector<SlotInstance> &instances, const CandidateMap &candidates);

struct EvidenceAccuracy {
  double retrieved = 0.0;
  double gold = 0.0;
  double random = 0.0;
  std::size_t n_instances = 0;
};

// Slot accuracy when the generator reads retrieved, gold or random passages.
EvidenceAccuracy evidence_accuracy(const RunConfig &config, const EncoderParams &query_encoder,
                                   const GeneratorParams &gen, const DenseIndex &index,
                                   const std::vector<Passage> &passages,
                                   const PassageTokens &passage_tokens, const Vocab &vocab,
                                   const std::vector<SlotInstance> &instances,
                                   std::size_t max_instances);

// ---------------------------------------------------------------------------
// Stages. Each reads artifacts under run_dir, checks the manifests of the
// stages that produced them and writes outputs plus manifests/<stage>.json.

struct StageOutcome {
  std::string stage;
  std::vector<std::string> outputs;  // relative to run_dir
  nlohmann::ordered_json summary;
};

StageOutcome stage_synth(const RunConfig &config, const std::string &out_dir);
StageOutcome stage_segment(const RunConfig &config);
StageOutcome stage_build_sparse(const RunConfig &config);
StageOutcome stage_mine_negatives(const RunConfig &config, const std::string &mode);
StageOutcome stage_train_dpr(const RunConfig &config, const std::string &triples);
StageOutcome stage_encode_corpus(const RunConfig &config);
StageOutcome stage_build_index(const RunConfig &config);
StageOutcome stage_run_dns(const RunConfig &config);
StageOutcome stage_train_rag(const RunConfig &config);
StageOutcome stage_predict(const RunConfig &config,
                           const std::optional<std::string> &candidates_path);
StageOutcome stage_evaluate(const RunConfig &config, const std::string &style);
StageOutcome stage_baseline(const RunConfig &config, const std::string &scorer,
                            const std::optional<std::string> &candidates_path);

struct AdaptOptions {
  std::string corpus;
  std::optional<std::string> train;  // few-shot pool, required when few_shot > 0
  std::optional<std::string> dev;    // ranked evaluation when present
  std::optional<std::string> candidates;
  std::size_t few_shot = 0;
};

StageOutcome stage_adapt(const RunConfig &config, const AdaptOptions &options);

// Stage names in pipeline order, for help text and error messages.
const std::vector<std::string> &stage_names();

}  // namespace kgi

#endif  // KGI_PIPELINE_H_
