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

#ifndef KGI_SYNTH_H_
#define KGI_SYNTH_H_

#include <cstdint>
#include <string>
#include <vector>

#include "kgi/corpus.h"

namespace kgi {

// Knobs for the generated slot-filling benchmark. Every fact becomes one
// paragraph: a relation template naming subject and object, followed by
// distractor sentences about other people.
struct SyntheticSpec {
  std::size_t n_entities = 400;
  std::size_t n_relations = 5;
  std::size_t facts_per_entity = 1;  // objects per (subject, relation)
  std::size_t distractor_sentences = 1;
  std::size_t distractor_words = 2;  // filler words per distractor sentence
  std::size_t vocab_noise = 20;  // filler words used by distractors
  std::size_t values_per_relation = 40;
  double train_fraction = 0.8;
  double dev_fraction = 0.2;
  uint64_t seed = 7;
  // Name words come from this seed alone; domains sharing it share a name stock.
  uint64_t name_seed = 1;
  std::size_t first_names = 20;
  std::size_t last_names = 40;
  std::string domain = "wiki";  // "wiki" or "news": disjoint relations and word pools

  void validate() const;
};

struct SyntheticBenchmark {
  std::vector<Document> corpus;
  std::vector<SlotInstance> train;
  std::vector<SlotInstance> dev;
};

// Relation labels available for a domain, in generation order.
std::vector<std::string> synthetic_relations(const std::string &domain);

SyntheticBenchmark generate_synthetic_benchmark(const SyntheticSpec &spec);

// Writes corpus.jsonl, train.jsonl and dev.jsonl under dir.
void write_synthetic_benchmark(const SyntheticBenchmark &bench, const std::string &dir);

// The first n instances of each relation, in input order.
std::vector<SlotInstance> sample_per_relation(const std::vector<SlotInstance> &instances,
                                              std::size_t n);

}  // namespace kgi

#endif  // KGI_SYNTH_H_
