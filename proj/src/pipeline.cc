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

#include "kgi/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "kgi/common.h"
#include "kgi/sparse_index.h"

namespace kgi {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

RunConfig::RunConfig() {
  dpr = TrainConfig::dpr_defaults();
  dpr.learn_rate = 3e-2;
  dpr.batch_size = 128;
  dpr.epochs = 4;
  rag = TrainConfig::rag_defaults();
  rag.learn_rate = 1e-2;
  rag.batch_size = 16;
  rag.epochs = 2;
  rag.warmup_instances = 0;
  few_shot = TrainConfig::few_shot_defaults();
  few_shot.learn_rate = 3e-2;
  few_shot.epochs = 30;
}

void RunConfig::validate() const {
  require(!run_dir.empty(), "config: run_dir must be set");
  require(max_passage_tokens >= 1, "config: max_passage_tokens must be >= 1");
  require(min_freq >= 1, "config: min_freq must be >= 1");
  require(d >= 1 && d_g >= 1, "config: d and d_g must be >= 1");
  require(bm25_pool >= 1, "config: bm25_pool must be >= 1");
  require(k >= 1, "config: k must be >= 1");
  require(beam >= 1, "config: beam must be >= 1");
  require(max_len >= 1, "config: max_len must be >= 1");
  require(workers >= 1, "config: workers must be >= 1");
  require(max_train_instances >= 0, "config: max_train_instances must be >= 0");
  require(retriever == "untrained" || retriever == "bm25" || retriever == "dns",
          "config: retriever must be untrained, bm25 or dns, got '" + retriever + "'");
  dpr_config().validate();
  dns_config().validate();
  rag_config().validate();
  few_shot_config().validate();
  require(index.M >= 2, "config: index.M must be >= 2");
  require(index.shards >= 1 && dns.shards >= 1, "config: shard counts must be >= 1");
  synth.validate();
}

TrainConfig RunConfig::dpr_config() const {
  TrainConfig c = dpr;
  c.seed = dpr_seed();
  return c;
}

DnsConfig RunConfig::dns_config() const {
  DnsConfig c;
  c.extra_epochs = dns.extra_epochs;
  c.pool_size = dns.pool_size;
  c.rounds = dns.rounds;
  c.index = index_config();
  c.index.shards = dns.shards;
  c.train = dpr_config();
  c.train.learn_rate = dns.learn_rate;
  c.train.batch_size = dns.batch_size;
  c.workers = workers;
  return c;
}

TrainConfig RunConfig::rag_config() const {
  TrainConfig c = rag;
  c.seed = rag_seed();
  return c;
}

TrainConfig RunConfig::few_shot_config() const {
  TrainConfig c = few_shot;
  c.seed = few_shot_seed();
  return c;
}

DenseIndexConfig RunConfig::index_config() const {
  DenseIndexConfig c = index;
  c.seed = index_seed();
  return c;
}

namespace {

ordered_json train_to_json(const TrainConfig &c) {
  ordered_json j;
  j["learn_rate"] = c.learn_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["warmup_instances"] = c.warmup_instances;
  j["schedule"] = schedule_name(c.schedule);
  j["max_grad_norm"] = c.max_grad_norm;
  j["weight_decay"] = c.weight_decay;
  j["adam_epsilon"] = c.adam_epsilon;
  return j;
}

void train_from_json(const ordered_json &j, TrainConfig &c) {
  c.learn_rate = j.at("learn_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<int>();
  c.warmup_instances = j.at("warmup_instances").get<long>();
  c.schedule = parse_schedule(j.at("schedule").get<std::string>());
  c.max_grad_norm = j.at("max_grad_norm").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.adam_epsilon = j.at("adam_epsilon").get<double>();
}

ordered_json synth_to_json(const SyntheticSpec &s) {
  ordered_json j;
  j["domain"] = s.domain;
  j["n_entities"] = s.n_entities;
  j["n_relations"] = s.n_relations;
  j["facts_per_entity"] = s.facts_per_entity;
  j["distractor_sentences"] = s.distractor_sentences;
  j["distractor_words"] = s.distractor_words;
  j["vocab_noise"] = s.vocab_noise;
  j["values_per_relation"] = s.values_per_relation;
  j["first_names"] = s.first_names;
  j["last_names"] = s.last_names;
  j["train_fraction"] = s.train_fraction;
  j["dev_fraction"] = s.dev_fraction;
  j["seed"] = s.seed;
  j["name_seed"] = s.name_seed;
  return j;
}

void synth_from_json(const ordered_json &j, SyntheticSpec &s) {
  s.domain = j.at("domain").get<std::string>();
  s.n_entities = j.at("n_entities").get<std::size_t>();
  s.n_relations = j.at("n_relations").get<std::size_t>();
  s.facts_per_entity = j.at("facts_per_entity").get<std::size_t>();
  s.distractor_sentences = j.at("distractor_sentences").get<std::size_t>();
  s.distractor_words = j.at("distractor_words").get<std::size_t>();
  s.vocab_noise = j.at("vocab_noise").get<std::size_t>();
  s.values_per_relation = j.at("values_per_relation").get<std::size_t>();
  s.first_names = j.at("first_names").get<std::size_t>();
  s.last_names = j.at("last_names").get<std::size_t>();
  s.train_fraction = j.at("train_fraction").get<double>();
  s.dev_fraction = j.at("dev_fraction").get<double>();
  s.seed = j.at("seed").get<uint64_t>();
  s.name_seed = j.at("name_seed").get<uint64_t>();
}

// Every key of doc must exist in reference; nested objects are checked recursively.
void check_known_keys(const ordered_json &doc, const ordered_json &reference,
                      const std::string &prefix) {
  require(doc.is_object(), "config: '" + (prefix.empty() ? "<root>" : prefix) +
                               "' must be an object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    require(reference.contains(it.key()), "config: unknown key '" + key + "'");
    const auto &ref = reference.at(it.key());
    if (ref.is_object()) check_known_keys(it.value(), ref, key);
  }
}

void merge_into(ordered_json &base, const ordered_json &doc) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.value().is_object() && base[it.key()].is_object()) {
      merge_into(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

}  // namespace

ordered_json config_to_json(const RunConfig &c) {
  ordered_json j;
  j["run_dir"] = c.run_dir;
  j["paths"]["corpus"] = c.paths.corpus;
  j["paths"]["train"] = c.paths.train;
  j["paths"]["dev"] = c.paths.dev;
  j["paths"]["vocab_corpora"] = c.paths.vocab_corpora;
  j["paths"]["vocab_instances"] = c.paths.vocab_instances;
  j["max_passage_tokens"] = c.max_passage_tokens;
  j["min_freq"] = c.min_freq;
  j["d"] = c.d;
  j["d_g"] = c.d_g;
  j["bm25_pool"] = c.bm25_pool;
  j["dpr"] = train_to_json(c.dpr);
  j["dns"]["extra_epochs"] = c.dns.extra_epochs;
  j["dns"]["pool_size"] = c.dns.pool_size;
  j["dns"]["rounds"] = c.dns.rounds;
  j["dns"]["learn_rate"] = c.dns.learn_rate;
  j["dns"]["batch_size"] = c.dns.batch_size;
  j["dns"]["shards"] = c.dns.shards;
  j["rag"] = train_to_json(c.rag);
  j["few_shot"] = train_to_json(c.few_shot);
  j["index"]["hnsw"] = c.index.use_hnsw;
  j["index"]["M"] = c.index.M;
  j["index"]["ef_construction"] = c.index.ef_construction;
  j["index"]["ef_search"] = c.index.ef_search;
  j["index"]["shards"] = c.index.shards;
  j["index"]["quantize"] = c.index.quantize;
  j["k"] = c.k;
  j["beam"] = c.beam;
  j["max_len"] = c.max_len;
  j["workers"] = c.workers;
  j["retriever"] = c.retriever;
  j["max_train_instances"] = c.max_train_instances;
  j["seed"] = c.seed;
  j["synth"] = synth_to_json(c.synth);
  return j;
}

RunConfig config_from_json(const ordered_json &doc) {
  ordered_json full = config_to_json(RunConfig{});
  check_known_keys(doc, full, "");
  merge_into(full, doc);
  RunConfig c;
  try {
    c.run_dir = full.at("run_dir").get<std::string>();
    const auto &p = full.at("paths");
    c.paths.corpus = p.at("corpus").get<std::string>();
    c.paths.train = p.at("train").get<std::string>();
    c.paths.dev = p.at("dev").get<std::string>();
    c.paths.vocab_corpora = p.at("vocab_corpora").get<std::vector<std::string>>();
    c.paths.vocab_instances = p.at("vocab_instances").get<std::vector<std::string>>();
    c.max_passage_tokens = full.at("max_passage_tokens").get<std::size_t>();
    c.min_freq = full.at("min_freq").get<int>();
    c.d = full.at("d").get<std::size_t>();
    c.d_g = full.at("d_g").get<std::size_t>();
    c.bm25_pool = full.at("bm25_pool").get<std::size_t>();
    train_from_json(full.at("dpr"), c.dpr);
    const auto &dn = full.at("dns");
    c.dns.extra_epochs = dn.at("extra_epochs").get<int>();
    c.dns.pool_size = dn.at("pool_size").get<std::size_t>();
    c.dns.rounds = dn.at("rounds").get<int>();
    c.dns.learn_rate = dn.at("learn_rate").get<double>();
    c.dns.batch_size = dn.at("batch_size").get<std::size_t>();
    c.dns.shards = dn.at("shards").get<std::size_t>();
    train_from_json(full.at("rag"), c.rag);
    train_from_json(full.at("few_shot"), c.few_shot);
    const auto &ix = full.at("index");
    c.index.use_hnsw = ix.at("hnsw").get<bool>();
    c.index.M = ix.at("M").get<std::size_t>();
    c.index.ef_construction = ix.at("ef_construction").get<std::size_t>();
    c.index.ef_search = ix.at("ef_search").get<std::size_t>();
    c.index.shards = ix.at("shards").get<std::size_t>();
    c.index.quantize = ix.at("quantize").get<bool>();
    c.k = full.at("k").get<std::size_t>();
    c.beam = full.at("beam").get<std::size_t>();
    c.max_len = full.at("max_len").get<std::size_t>();
    c.workers = full.at("workers").get<std::size_t>();
    c.retriever = full.at("retriever").get<std::string>();
    c.max_train_instances = full.at("max_train_instances").get<long>();
    c.seed = full.at("seed").get<uint64_t>();
    synth_from_json(full.at("synth"), c.synth);
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

void apply_override(ordered_json &doc, const std::string &assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0,
          "--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  ordered_json value = ordered_json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  ordered_json *node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    require(!part.empty(), "--set: malformed key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = ordered_json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::optional<std::string> &path,
                          const std::vector<std::string> &overrides) {
  ordered_json doc = ordered_json::object();
  if (path) {
    require(fs::exists(*path), "config file not found: " + *path);
    doc = ordered_json::parse(read_file(*path), nullptr, false);
    require(!doc.is_discarded(), "config file is not valid JSON: " + *path);
  }
  for (const auto &o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

// ---------------------------------------------------------------------------
// Building blocks

Vocab build_run_vocab(const RunConfig &config, const std::vector<Passage> &passages,
                      const std::vector<SlotInstance> &train,
                      const std::vector<SlotInstance> &dev) {
  std::vector<std::string> extra;
  auto add_queries = [&](const std::vector<SlotInstance> &instances) {
    for (const auto &inst : instances) extra.push_back(render_query(inst.subject, inst.relation));
  };
  add_queries(train);
  add_queries(dev);
  for (const auto &path : config.paths.vocab_instances) add_queries(read_jsonl_instances(path));
  for (const auto &path : config.paths.vocab_corpora) {
    for (const auto &p : segment_documents(read_jsonl_corpus(path), config.max_passage_tokens)) {
      extra.push_back(passage_encoder_text(p));
    }
  }
  return build_vocab(passages, config.min_freq, extra);
}

PreparedData prepare_data(const RunConfig &config) {
  PreparedData d;
  d.corpus = read_jsonl_corpus(config.paths.corpus);
  d.train = read_jsonl_instances(config.paths.train);
  d.dev = read_jsonl_instances(config.paths.dev);
  d.passages = segment_documents(d.corpus, config.max_passage_tokens);
  d.vocab = build_run_vocab(config, d.passages, d.train, d.dev);
  return d;
}

std::vector<SlotInstance> capped_train(const RunConfig &config,
                                       const std::vector<SlotInstance> &train) {
  if (config.max_train_instances <= 0 ||
      train.size() <= static_cast<std::size_t>(config.max_train_instances)) {
    return train;
  }
  return {train.begin(), train.begin() + config.max_train_instances};
}

EncoderPair initial_encoders(const RunConfig &config, const Vocab &vocab) {
  return init_encoder_pair(vocab.size(), config.d, config.encoder_seed());
}

DprTrainResult train_bm25_retriever(const RunConfig &config, const std::vector<Passage> &passages,
                                    const std::vector<SlotInstance> &train, const Vocab &vocab,
                                    BuiltTriples *mined) {
  const auto bm25 = build_bm25_index(passages);
  BuiltTriples triples = mine_bm25_triples(bm25, passages, train, config.bm25_pool);
  require(!triples.triples.empty(), "BM25 mining produced no training triples");
  const auto examples = make_dpr_examples(triples.triples, passages, train, vocab);
  auto result = train_dpr(examples, initial_encoders(config, vocab), config.dpr_config());
  if (mined) *mined = std::move(triples);
  return result;
}

DnsResult train_dns_retriever(const RunConfig &config, const std::vector<Passage> &passages,
                              const std::vector<SlotInstance> &train, const Vocab &vocab,
                              const EncoderPair &start) {
  return run_dns(passages, train, vocab, start, config.dns_config());
}

DenseIndex build_serving_index(const RunConfig &config, const EncoderParams &context_encoder,
                               const Vocab &vocab, const std::vector<Passage> &passages) {
  return DenseIndex(encode_corpus(context_encoder, vocab, passages, config.workers),
                    config.index_config());
}

RagTrainResult train_rag_model(const RunConfig &config, const std::vector<SlotInstance> &train,
                               const Vocab &vocab, const EncoderPair &encoders,
                               const DenseIndex &index, const PassageTokens &passage_tokens) {
  const auto gen = init_generator(vocab.size(), config.d_g, config.generator_seed());
  const auto examples = make_rag_examples(train, vocab);
  return train_rag(examples, encoders, gen, index, passage_tokens, config.rag_config(), config.k);
}

RagTrainResult few_shot_adapt(const RunConfig &config, const std::vector<SlotInstance> &train,
                              std::size_t n_per_relation, const Vocab &vocab,
                              const EncoderPair &encoders, const GeneratorParams &gen,
                              const DenseIndex &index, const PassageTokens &passage_tokens) {
  require(n_per_relation >= 1, "few-shot adaptation needs n >= 1");
  const auto sample = sample_per_relation(train, n_per_relation);
  require(!sample.empty(), "few-shot adaptation: no training instances to sample");
  const auto examples = make_rag_examples(sample, vocab);
  return train_rag(examples, encoders, gen, index, passage_tokens, config.few_shot_config(),
                   config.k);
}

double retrieval_r_precision(const EncoderParams &query_encoder, const DenseIndex &index,
                             const Vocab &vocab, const std::vector<Passage> &passages,
                             const std::vector<SlotInstance> &instances, std::size_t k) {
  require(!instances.empty(), "retrieval_r_precision: no instances");
  double total = 0.0;
  for (const auto &inst : instances) {
    const auto q = encode(query_encoder, tokenize(vocab, render_query(inst.subject, inst.relation)));
    std::vector<std::vector<ParagraphRef>> lineage;
    for (const auto &r : index.search(q, k)) lineage.push_back(passages[r.index].paragraph_ids);
    total += r_precision(lineage, inst.provenance);
  }
  return total / static_cast<double>(instances.size());
}

CandidateMap cooccurrence_candidates(const std::vector<Document> &docs,
                                     const std::vector<Passage> &passages,
                                     const std::vector<SlotInstance> &instances) {
  const auto cooc = build_cooccurrence_index(passages, passage_entities(docs, passages));
  CandidateMap out;
  for (const auto &inst : instances) out[inst.query_id] = cooc.cooccurring(inst.subject);
  return out;
}

void write_candidates_jsonl(const std::string &path, const CandidateMap &candidates) {
  std::string out;
  for (const auto &[qid, cands] : candidates) {
    ordered_json j;
    j["query_id"] = qid;
    j["candidates"] = cands;
    out += j.dump() + "\n";
  }
  write_file(path, out);
}

CandidateMap read_candidates_jsonl(const std::string &path) {
  require(fs::exists(path), "candidates file not found: " + path);
  CandidateMap out;
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = ordered_json::parse(line, nullptr, false);
    require(!j.is_discarded() && j.is_object() && j.contains("query_id") &&
                j.contains("candidates"),
            path + ":" + std::to_string(lineno) + ": expected {query_id, candidates}");
    out[j["query_id"].get<std::string>()] = j["candidates"].get<std::vector<std::string>>();
  }
  return out;
}

std::vector<Prediction> predict_answers(const RunConfig &config, const EncoderParams &query_encoder,
                                        const GeneratorParams &gen, const DenseIndex &index,
                                        const std::vector<Passage> &passages,
                                        const PassageTokens &passage_tokens, const Vocab &vocab,
                                        const std::vector<SlotInstance> &instances) {
  std::vector<Prediction> out;
  for (const auto &inst : instances) {
    const auto q = tokenize(vocab, render_query(inst.subject, inst.relation));
    const auto ctx = retrieve_context(query_encoder, gen, index, passage_tokens, q, config.k);
    const auto hyps = beam_search(gen, ctx, config.beam, config.max_len, nullptr);
    Prediction p;
    p.query_id = inst.query_id;
    if (!hyps.empty()) {
      p.answer = detokenize(vocab, hyps[0].tokens);
      p.logprob = hyps[0].log_prob;
    } else {
      p.logprob = kUnrankable;
    }
    for (const auto &r : ctx.retrieved) p.provenance.push_back(passages[r.index].passage_id);
    p.scores = ctx.z;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<RankedPrediction> rank_with_generator(
    const RunConfig &config, const EncoderParams &query_encoder, const GeneratorParams &gen,
    const DenseIndex &index, const std::vector<Passage> &passages,
    const PassageTokens &passage_tokens, const Vocab &vocab,
    const std::vector<SlotInstance> &instances, const CandidateMap &candidates) {
  std::vector<RankedPrediction> out;
  for (const auto &inst : instances) {
    const auto it = candidates.find(inst.query_id);
    require(it != candidates.end() && !it->second.empty(),
            "no candidates for query " + inst.query_id);
    const auto trie = build_prefix_trie(it->second, vocab);
    std::size_t longest = 0;
    for (const auto &s : trie.sequences()) longest = std::max(longest, s.size());
    const auto q = tokenize(vocab, render_query(inst.subject, inst.relation));
    const auto ctx = retrieve_context(query_encoder, gen, index, passage_tokens, q, config.k);
    const auto hyps = beam_search(gen, ctx, trie.candidates().size(), longest, &trie);
    RankedPrediction rp;
    rp.ranked.query_id = inst.query_id;
    std::vector<bool> seen(trie.candidates().size(), false);
    for (const auto &h : hyps) {
      seen[static_cast<std::size_t>(h.candidate)] = true;
      rp.ranked.ranked.push_back(trie.candidates()[static_cast<std::size_t>(h.candidate)]);
      rp.scores.push_back(h.log_prob);
    }
    // Candidates the beam never finished rank last, alphabetically.
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < seen.size(); ++i) {
      if (!seen[i]) rest.push_back(trie.candidates()[i]);
    }
    std::sort(rest.begin(), rest.end());
    for (auto &c : rest) {
      rp.ranked.ranked.push_back(std::move(c));
      rp.scores.push_back(kUnrankable);
    }
    for (const auto &r : ctx.retrieved) rp.provenance.push_back(passages[r.index].passage_id);
    out.push_back(std::move(rp));
  }
  return out;
}

EvidenceAccuracy evidence_accuracy(const RunConfig &config, const EncoderParams &query_encoder,
                                   const GeneratorParams &gen, const DenseIndex &index,
                                   const std::vector<Passage> &passages,
                                   const PassageTokens &passage_tokens, const Vocab &vocab,
                                   const std::vector<SlotInstance> &instances,
                                   std::size_t max_instances) {
  require(!instances.empty(), "evidence_accuracy: no instances");
  std::map<ParagraphRef, std::size_t> home;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    for (const auto &ref : passages[i].paragraph_ids) home[ref] = i;
  }
  auto answer_of = [&](const std::vector<Hypothesis> &hyps) {
    return hyps.empty() ? std::string() : detokenize(vocab, hyps[0].tokens);
  };
  Rng rng(config.evidence_seed());
  const std::vector<double> z{0.0};
  EvidenceAccuracy acc;
  acc.n_instances = std::min(instances.size(), max_instances);
  for (std::size_t i = 0; i < acc.n_instances; ++i) {
    const auto &inst = instances[i];
    const auto q = tokenize(vocab, render_query(inst.subject, inst.relation));
    const auto retrieved = beam_search(query_encoder, gen, index, passage_tokens, q, config.k,
                                       config.beam, config.max_len, nullptr);
    acc.retrieved += accuracy(answer_of(retrieved), inst.answers);
    const auto gold_it = home.find(inst.provenance.at(0));
    require(gold_it != home.end(), "gold paragraph of " + inst.query_id + " is in no passage");
    const std::vector<std::vector<TokenId>> gold{passage_tokens[gold_it->second]};
    acc.gold += accuracy(
        answer_of(beam_search(gen, fixed_context(gen, z, gold, q), config.beam, config.max_len,
                              nullptr)),
        inst.answers);
    const std::vector<std::vector<TokenId>> random{passage_tokens[rng.below(passages.size())]};
    acc.random += accuracy(
        answer_of(beam_search(gen, fixed_context(gen, z, random, q), config.beam,
                              config.max_len, nullptr)),
        inst.answers);
  }
  const double n = static_cast<double>(acc.n_instances);
  acc.retrieved /= n;
  acc.gold /= n;
  acc.random /= n;
  return acc;
}

// ---------------------------------------------------------------------------
// Run directory, manifests and staleness checks

namespace {

const char *kPassages = "corpus/passages.jsonl";
const char *kVocab = "corpus/vocab.txt";
const char *kCandidates = "corpus/candidates.jsonl";
const char *kSparse = "index/sparse.json";
const char *kVectors = "index/vectors.bin";
const char *kDenseIndex = "index/dense.idx";
const char *kRagQuery = "checkpoints/rag.query.ckpt";
const char *kRagGenerator = "checkpoints/rag.generator.ckpt";
const char *kPredictions = "reports/predictions.jsonl";
const char *kConstrained = "reports/predictions_constrained.jsonl";
const char *kRanked = "reports/ranked.jsonl";
const char *kMetrics = "reports/metrics.json";
const char *kRanking = "reports/ranking.json";

std::string query_ckpt(const std::string &retriever) {
  if (retriever == "untrained") return "checkpoints/untrained.query.ckpt";
  return "checkpoints/dpr_" + retriever + ".query.ckpt";
}
std::string context_ckpt(const std::string &retriever) {
  if (retriever == "untrained") return "checkpoints/untrained.context.ckpt";
  return "checkpoints/dpr_" + retriever + ".context.ckpt";
}

// The command that produces a stage id, for error messages.
std::string command_for(const std::string &stage) {
  if (stage == "mine-negatives-bm25") return "mine-negatives --mode bm25";
  if (stage == "mine-negatives-dense") return "mine-negatives --mode dense";
  if (stage == "train-dpr-dense") return "train-dpr --triples dense";
  if (stage == "predict-candidates") return "predict --candidates <file>";
  if (stage == "evaluate-kilt") return "evaluate --style kilt";
  if (stage == "evaluate-ranking") return "evaluate --style ranking";
  if (stage.rfind("baseline-", 0) == 0) return "baseline --scorer " + stage.substr(9);
  return stage;
}

ordered_json train_subset(const TrainConfig &c) { return train_to_json(c); }

// The slice of the configuration an artifact depends on.
ordered_json stage_config(const RunConfig &c, const std::string &stage) {
  const ordered_json all = config_to_json(c);
  ordered_json j = ordered_json::object();
  if (stage == "segment") {
    j["paths"] = all["paths"];
    j["max_passage_tokens"] = c.max_passage_tokens;
    j["min_freq"] = c.min_freq;
  } else if (stage == "mine-negatives-bm25") {
    j["bm25_pool"] = c.bm25_pool;
    j["max_train_instances"] = c.max_train_instances;
  } else if (stage == "mine-negatives-dense") {
    j["dns"] = all["dns"];
    j["max_train_instances"] = c.max_train_instances;
  } else if (stage == "train-dpr") {
    j["d"] = c.d;
    j["dpr"] = train_subset(c.dpr);
    j["seed"] = c.seed;
  } else if (stage == "train-dpr-dense" || stage == "run-dns") {
    j["dpr"] = train_subset(c.dpr);
    j["dns"] = all["dns"];
    j["seed"] = c.seed;
    j["max_train_instances"] = c.max_train_instances;
    if (stage == "run-dns") j["index"] = all["index"];
  } else if (stage == "encode-corpus") {
    j["retriever"] = c.retriever;
    if (c.retriever == "untrained") {
      j["d"] = c.d;
      j["seed"] = c.seed;
    }
  } else if (stage == "build-index") {
    j["index"] = all["index"];
    j["seed"] = c.seed;
  } else if (stage == "train-rag") {
    j["rag"] = train_subset(c.rag);
    j["d_g"] = c.d_g;
    j["k"] = c.k;
    j["seed"] = c.seed;
    j["max_train_instances"] = c.max_train_instances;
  } else if (stage == "predict" || stage == "predict-candidates") {
    j["k"] = c.k;
    if (stage == "predict") {
      j["beam"] = c.beam;
      j["max_len"] = c.max_len;
    }
  } else if (stage.rfind("adapt-", 0) == 0) {
    j["few_shot"] = train_subset(c.few_shot);
    j["index"] = all["index"];
    j["max_passage_tokens"] = c.max_passage_tokens;
    j["k"] = c.k;
    j["seed"] = c.seed;
  }
  return j;
}

class RunDir {
 public:
  explicit RunDir(const RunConfig &config) : config_(config), root_(config.run_dir) {}

  std::string path(const std::string &rel) const { return (root_ / rel).string(); }

  void ensure_parent(const std::string &rel) const {
    fs::create_directories(fs::path(path(rel)).parent_path());
  }

  // Verifies rel was written by a stage whose manifest still matches the
  // file, the current configuration and that stage's own inputs.
  // Upstream artifacts are checked the same way, so a change anywhere in
  // the chain is caught.
  void require_artifact(const std::string &rel, const std::string &producer) const {
    if (verified_.count(rel)) return;
    const std::string rerun = "run `kgi " + command_for(producer) + "`";
    if (!fs::exists(path(rel))) {
      throw StageError(rel + " is missing under " + root_.string() + "; " + rerun + " first");
    }
    const std::string digest = digest_of(path(rel));
    std::optional<ordered_json> match;
    std::string recorded_by;
    const fs::path dir = root_ / "manifests";
    if (fs::exists(dir)) {
      std::vector<fs::path> files;
      for (const auto &e : fs::directory_iterator(dir)) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto &f : files) {
        const auto m = ordered_json::parse(read_file(f.string()), nullptr, false);
        if (m.is_discarded() || !m.contains("outputs")) continue;
        for (const auto &o : m["outputs"]) {
          if (o["path"] != rel) continue;
          recorded_by = m["stage"].get<std::string>();
          if (o["sha256"] == digest) match = m;
        }
      }
    }
    if (recorded_by.empty()) {
      throw StageError("no manifest records " + rel + "; " + rerun);
    }
    if (!match) {
      throw StageError("stale artifact: " + rel + " no longer matches the manifest of `kgi " +
                       command_for(recorded_by) + "`; rerun it");
    }
    const std::string stage = (*match)["stage"].get<std::string>();
    if ((*match)["config"] != stage_config(config_, stage)) {
      throw StageError("stale artifact: configuration of `kgi " + command_for(stage) +
                       "` changed since it wrote " + rel + "; rerun it");
    }
    for (const auto &in : (*match)["inputs"]) {
      const std::string p = in["path"].get<std::string>();
      const std::string resolved = in["in_run"].get<bool>() ? path(p) : p;
      if (!fs::exists(resolved) || digest_of(resolved) != in["sha256"].get<std::string>()) {
        throw StageError("stale artifact: input " + p + " of `kgi " + command_for(stage) +
                         "` changed since it ran; rerun `kgi " + command_for(stage) + "`");
      }
    }
    verified_.insert(rel);
    for (const auto &in : (*match)["inputs"]) {
      if (in["in_run"].get<bool>()) require_artifact(in["path"].get<std::string>(), stage);
    }
  }

  void require_external(const std::string &p) const {
    require(fs::exists(p), "input file not found: " + p);
  }

  void write_manifest(const std::string &stage, const std::vector<std::string> &run_inputs,
                      const std::vector<std::string> &external_inputs,
                      const std::vector<std::string> &outputs, double seconds,
                      const ordered_json &summary) const {
    ordered_json m;
    m["stage"] = stage;
    m["command"] = command_for(stage);
    m["seed"] = config_.seed;
    m["config"] = stage_config(config_, stage);
    m["inputs"] = ordered_json::array();
    for (const auto &p : run_inputs) {
      m["inputs"].push_back({{"path", p}, {"in_run", true}, {"sha256", sha256_file(path(p))}});
    }
    for (const auto &p : external_inputs) {
      m["inputs"].push_back({{"path", p}, {"in_run", false}, {"sha256", sha256_file(p)}});
    }
    m["outputs"] = ordered_json::array();
    for (const auto &p : outputs) {
      m["outputs"].push_back({{"path", p}, {"sha256", sha256_file(path(p))}});
    }
    m["summary"] = summary;
    m["timings"]["seconds"] = seconds;
    const std::string rel = "manifests/" + stage + ".json";
    ensure_parent(rel);
    write_file(path(rel), m.dump(2) + "\n");
  }

 private:
  const std::string &digest_of(const std::string &file) const {
    auto it = digests_.find(file);
    if (it == digests_.end()) it = digests_.emplace(file, sha256_file(file)).first;
    return it->second;
  }

  const RunConfig &config_;
  fs::path root_;
  mutable std::set<std::string> verified_;
  mutable std::map<std::string, std::string> digests_;
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Segmented corpus plus instance files, verified against the segment manifest.
struct Segmented {
  std::vector<Passage> passages;
  Vocab vocab;
  std::vector<SlotInstance> train;
  std::vector<SlotInstance> dev;
};

Segmented load_segmented(const RunDir &run, const RunConfig &config) {
  run.require_artifact(kPassages, "segment");
  run.require_artifact(kVocab, "segment");
  Segmented s;
  s.passages = read_jsonl_passages(run.path(kPassages));
  s.vocab = Vocab::load(run.path(kVocab));
  s.train = read_jsonl_instances(config.paths.train);
  s.dev = read_jsonl_instances(config.paths.dev);
  return s;
}

std::vector<std::string> segment_inputs(const RunConfig &config) {
  std::vector<std::string> in{config.paths.corpus, config.paths.train, config.paths.dev};
  for (const auto &p : config.paths.vocab_corpora) in.push_back(p);
  for (const auto &p : config.paths.vocab_instances) in.push_back(p);
  return in;
}

void write_vectors(const std::string &path, const VectorMatrix &m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  out.write("KGIVEC01", 8);
  binio::write_u32(out, 1);
  binio::write_u64(out, m.size());
  binio::write_u32(out, static_cast<uint32_t>(m.dim));
  for (const auto &id : m.ids) binio::write_string(out, id);
  binio::write_f64s(out, m.data);
}

VectorMatrix read_vectors(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("missing corpus vectors " + path);
  binio::expect_magic(in, "KGIVEC01", path);
  require(binio::read_u32(in) == 1, path + ": unsupported vectors version");
  VectorMatrix m;
  const uint64_t n = binio::read_u64(in);
  m.dim = binio::read_u32(in);
  m.ids.resize(n);
  for (auto &id : m.ids) id = binio::read_string(in);
  m.data.resize(n * m.dim);
  binio::read_f64s(in, m.data);
  m.validate();
  return m;
}

struct Retriever {
  EncoderPair encoders;
  std::string query_path;
  std::string context_path;
};

Retriever load_retriever(const RunDir &run, const Vocab &vocab, const std::string &name) {
  const std::string producer = name == "untrained" ? "encode-corpus"
                               : name == "bm25"    ? "train-dpr"
                                                   : "run-dns";
  Retriever r{EncoderPair{}, query_ckpt(name), context_ckpt(name)};
  run.require_artifact(r.query_path, producer);
  run.require_artifact(r.context_path, producer);
  r.encoders.query_encoder = load_encoder(run.path(r.query_path), vocab.hash());
  r.encoders.context_encoder = load_encoder(run.path(r.context_path), vocab.hash());
  return r;
}

// Serving index over the segmented corpus, checked back to the retriever.
DenseIndex load_serving_index(const RunDir &run) {
  run.require_artifact(kVectors, "encode-corpus");
  run.require_artifact(kDenseIndex, "build-index");
  return DenseIndex::load(run.path(kDenseIndex));
}

void write_ranked_jsonl(const std::string &path, const std::vector<RankedPrediction> &ranked) {
  std::string out;
  for (const auto &r : ranked) {
    ordered_json j;
    j["query_id"] = r.ranked.query_id;
    j["ranked"] = r.ranked.ranked;
    ordered_json scores = ordered_json::array();
    for (double s : r.scores) {
      if (std::isfinite(s)) {
        scores.push_back(s);
      } else {
        scores.push_back(nullptr);
      }
    }
    j["scores"] = scores;
    j["provenance"] = r.provenance;
    out += j.dump() + "\n";
  }
  write_file(path, out);
}

std::vector<RankedInstance> read_ranked_jsonl(const std::string &path) {
  std::vector<RankedInstance> out;
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = ordered_json::parse(line, nullptr, false);
    require(!j.is_discarded() && j.contains("query_id") && j.contains("ranked"),
            path + ":" + std::to_string(lineno) + ": expected {query_id, ranked}");
    out.push_back({j["query_id"].get<std::string>(), j["ranked"].get<std::vector<std::string>>()});
  }
  return out;
}

std::vector<Prediction> top_candidates(const std::vector<RankedPrediction> &ranked) {
  std::vector<Prediction> out;
  for (const auto &r : ranked) {
    Prediction p;
    p.query_id = r.ranked.query_id;
    if (!r.ranked.ranked.empty()) {
      p.answer = r.ranked.ranked.front();
      p.logprob = r.scores.front();
    }
    p.provenance = r.provenance;
    out.push_back(std::move(p));
  }
  return out;
}

StageOutcome finish(const RunDir &run, const std::string &stage,
                    const std::vector<std::string> &run_inputs,
                    const std::vector<std::string> &external_inputs,
                    const std::vector<std::string> &outputs, const Stopwatch &clock,
                    ordered_json summary) {
  run.write_manifest(stage, run_inputs, external_inputs, outputs, clock.seconds(), summary);
  return {stage, outputs, std::move(summary)};
}

ordered_json losses_json(const std::vector<double> &losses) {
  ordered_json j = ordered_json::array();
  for (double l : losses) j.push_back(l);
  return j;
}

ordered_json mining_json(const BuiltTriples &t) {
  ordered_json j;
  j["triples"] = t.triples.size();
  j["dropped_gold_overlap"] = t.report.dropped_gold_overlap;
  j["dropped_answer"] = t.report.dropped_answer;
  j["dropped_exhausted"] = t.report.dropped_exhausted;
  j["no_positive"] = t.no_positive;
  return j;
}

}  // namespace

const std::vector<std::string> &stage_names() {
  static const std::vector<std::string> names = {
      "synth",     "segment",   "build-sparse", "mine-negatives", "train-dpr",
      "run-dns",   "encode-corpus", "build-index", "train-rag",   "predict",
      "evaluate",  "baseline",  "adapt"};
  return names;
}

// ---------------------------------------------------------------------------
// Stages

StageOutcome stage_synth(const RunConfig &config, const std::string &out_dir) {
  Stopwatch clock;
  const auto bench = generate_synthetic_benchmark(config.synth);
  write_synthetic_benchmark(bench, out_dir);
  ordered_json m;
  m["stage"] = "synth";
  m["spec"] = synth_to_json(config.synth);
  m["outputs"] = ordered_json::array();
  for (const char *name : {"corpus.jsonl", "train.jsonl", "dev.jsonl"}) {
    const std::string p = (fs::path(out_dir) / name).string();
    m["outputs"].push_back({{"path", name}, {"sha256", sha256_file(p)}});
  }
  m["timings"]["seconds"] = clock.seconds();
  write_file((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
  ordered_json summary;
  summary["documents"] = bench.corpus.size();
  summary["train"] = bench.train.size();
  summary["dev"] = bench.dev.size();
  return {"synth", {"corpus.jsonl", "train.jsonl", "dev.jsonl", "manifest.json"}, summary};
}

StageOutcome stage_segment(const RunConfig &config) {
  Stopwatch clock;
  RunDir run(config);
  const auto inputs = segment_inputs(config);
  for (const auto &p : inputs) run.require_external(p);
  const auto data = prepare_data(config);
  run.ensure_parent(kPassages);
  write_jsonl_passages(run.path(kPassages), data.passages);
  data.vocab.save(run.path(kVocab));
  write_candidates_jsonl(run.path(kCandidates),
                         cooccurrence_candidates(data.corpus, data.passages, data.dev));
  ordered_json summary;
  summary["documents"] = data.corpus.size();
  summary["passages"] = data.passages.size();
  summary["vocab_size"] = data.vocab.size();
  return finish(run, "segment", {}, inputs, {kPassages, kVocab, kCandidates}, clock, summary);
}

StageOutcome stage_build_sparse(const RunConfig &config) {
  Stopwatch clock;
  RunDir run(config);
  run.require_artifact(kPassages, "segment");
  const auto passages = read_jsonl_passages(run.path(kPassages));
  const auto bm25 = build_bm25_index(passages);
  ordered_json j;
  j["k1"] = bm25.params().k1;
  j["b"] = bm25.params().b;
  j["passages"] = bm25.size();
  j["average_length"] = bm25.average_length();
  j["lengths"] = ordered_json::array();
  for (std::size_t i = 0; i < bm25.size(); ++i) j["lengths"].push_back(bm25.length(i));
  run.ensure_parent(kSparse);
  write_file(run.path(kSparse), j.dump() + "\n");
  ordered_json summary;
  summary["passages"] = bm25.size();
  summary["average_length"] = bm25.average_length();
  return finish(run, "build-sparse", {kPassages}, {}, {kSparse}, clock, summary);
}

namespace {

// The BM25 index is rebuilt from passages; the stored statistics must agree.
Bm25Index load_sparse(const RunDir &run, const std::vector<Passage> &passages) {
  run.require_artifact(kSparse, "build-sparse");
  const auto j = ordered_json::parse(read_file(run.path(kSparse)), nullptr, false);
  require(!j.is_discarded(), std::string(kSparse) + " is not valid JSON");
  auto bm25 = build_bm25_index(passages, j.at("k1").get<double>(), j.at("b").get<double>());
  if (j.at("passages").get<std::size_t>() != bm25.size() ||
      j.at("average_length").get<double>() != bm25.average_length()) {
    throw StageError(std::string(kSparse) + " disagrees with the passages; rerun `kgi build-sparse`");
  }
  return bm25;
}

}  // namespace

StageOutcome stage_mine_negatives(const RunConfig &config, const std::string &mode) {
  Stopwatch clock;
  RunDir run(config);
  require(mode == "bm25" || mode == "dense", "--mode must be bm25 or dense, got '" + mode + "'");
  auto data = load_segmented(run, config);
  const auto train = capped_train(config, data.train);
  if (mode == "bm25") {
    const auto bm25 = load_sparse(run, data.passages);
    const auto mined = mine_bm25_triples(bm25, data.passages, train, config.bm25_pool);
    const std::string out = "triples/bm25.jsonl";
    run.ensure_parent(out);
    write_triples_jsonl(run.path(out), mined.triples, data.passages, train);
    return finish(run, "mine-negatives-bm25", {kPassages, kVocab, kSparse}, {config.paths.train},
                  {out}, clock, mining_json(mined));
  }
  require(config.retriever == "bm25",
          "mine-negatives --mode dense mines with the BM25-trained retriever and its index; "
          "use --set retriever=bm25 and rebuild encode-corpus/build-index");
  const auto retriever = load_retriever(run, data.vocab, "bm25");
  const auto index = load_serving_index(run);
  const auto mined = mine_dense_triples(index, retriever.encoders.query_encoder, data.vocab,
                                        data.passages, train, config.dns.pool_size);
  const std::string out = "triples/dense.jsonl";
  run.ensure_parent(out);
  write_triples_jsonl(run.path(out), mined.triples, data.passages, train);
  return finish(run, "mine-negatives-dense",
                {kPassages, kVocab, retriever.query_path, retriever.context_path, kVectors,
                 kDenseIndex},
                {config.paths.train}, {out}, clock, mining_json(mined));
}

StageOutcome stage_train_dpr(const RunConfig &config, const std::string &triples) {
  Stopwatch clock;
  RunDir run(config);
  require(triples == "bm25" || triples == "dense",
          "--triples must be bm25 or dense, got '" + triples + "'");
  auto data = load_segmented(run, config);
  const auto train = capped_train(config, data.train);
  const std::string in = "triples/" + triples + ".jsonl";
  run.require_artifact(in, triples == "bm25" ? "mine-negatives-bm25" : "mine-negatives-dense");
  const auto loaded = read_triples_jsonl(run.path(in), data.passages, train);
  require(!loaded.empty(), in + " holds no triples");
  const auto examples = make_dpr_examples(loaded, data.passages, train, data.vocab);
  std::vector<std::string> run_inputs{kPassages, kVocab, in};
  EncoderPair start;
  TrainConfig tc = config.dpr_config();
  std::string name = "bm25";
  if (triples == "bm25") {
    start = initial_encoders(config, data.vocab);
  } else {
    const auto from = load_retriever(run, data.vocab, "bm25");
    start = from.encoders;
    run_inputs.push_back(from.query_path);
    run_inputs.push_back(from.context_path);
    const auto dns = config.dns_config();
    tc = dns.train;
    tc.epochs = dns.extra_epochs;
    name = "dns";
  }
  const auto result = train_dpr(examples, start, tc);
  run.ensure_parent(query_ckpt(name));
  save_encoder(run.path(query_ckpt(name)), result.encoders.query_encoder, data.vocab.hash());
  save_encoder(run.path(context_ckpt(name)), result.encoders.context_encoder, data.vocab.hash());
  ordered_json summary;
  summary["examples"] = examples.size();
  summary["epoch_losses"] = losses_json(result.epoch_losses);
  return finish(run, triples == "bm25" ? "train-dpr" : "train-dpr-dense", run_inputs,
                {config.paths.train}, {query_ckpt(name), context_ckpt(name)}, clock, summary);
}

StageOutcome stage_run_dns(const RunConfig &config) {
  Stopwatch clock;
  RunDir run(config);
  auto data = load_segmented(run, config);
  const auto train = capped_train(config, data.train);
  const auto from = load_retriever(run, data.vocab, "bm25");
  const auto result =
      train_dns_retriever(config, data.passages, train, data.vocab, from.encoders);
  run.ensure_parent(query_ckpt("dns"));
  save_encoder(run.path(query_ckpt("dns")), result.encoders.query_encoder, data.vocab.hash());
  save_encoder(run.path(context_ckpt("dns")), result.encoders.context_encoder,
               data.vocab.hash());
  std::vector<std::string> outputs{query_ckpt("dns"), context_ckpt("dns")};
  ordered_json summary;
  summary["rounds"] = ordered_json::array();
  for (std::size_t r = 0; r < result.rounds.size(); ++r) {
    const auto &round = result.rounds[r];
    const std::string out = "triples/dns_round" + std::to_string(r + 1) + ".jsonl";
    run.ensure_parent(out);
    write_triples_jsonl(run.path(out), round.mined.triples, data.passages, train);
    outputs.push_back(out);
    ordered_json rj = mining_json(round.mined);
    rj["epoch_losses"] = losses_json(round.epoch_losses);
    summary["rounds"].push_back(rj);
  }
  return finish(run, "run-dns", {kPassages, kVocab, from.query_path, from.context_path},
                {config.paths.train}, outputs, clock, summary);
}

StageOutcome stage_encode_corpus(const RunConfig &config) {
  Stopwatch clock;
  RunDir run(config);
  auto data = load_segmented(run, config);
  std::vector<std::string> run_inputs{kPassages, kVocab};
  std::vector<std::string> outputs;
  EncoderParams context;
  if (config.retriever == "untrained") {
    const auto init = initial_encoders(config, data.vocab);
    run.ensure_parent(query_ckpt("untrained"));
    save_encoder(run.path(query_ckpt("untrained")), init.query_encoder, data.vocab.hash());
    save_encoder(run.path(context_ckpt("untrained")), init.context_encoder, data.vocab.hash());
    outputs = {query_ckpt("untrained"), context_ckpt("untrained")};
    context = init.context_encoder;
  } else {
    const auto r = load_retriever(run, data.vocab, config.retriever);
    run_inputs.push_back(r.context_path);
    context = r.encoders.context_encoder;
  }
  const auto vectors = encode_corpus(context, data.vocab, data.passages, config.workers);
  run.ensure_parent(kVectors);
  write_vectors(run.path(kVectors), vectors);
  outputs.push_back(kVectors);
  ordered_json summary;
  summary["retriever"] = config.retriever;
  summary["vectors"] = vectors.size();
  summary["dim"] = vectors.dim;
  return finish(run, "encode-corpus", run_inputs, {}, outputs, clock, summary);
}

StageOutcome stage_build_index(const RunConfig &config) {
  Stopwatch clock;
  RunDir run(config);
  run.require_artifact(kVectors, "encode-corpus");
  const auto vectors = read_vectors(run.path(kVectors));
  const DenseIndex index(vectors, config.index_config());
  index.save(run.path(kDenseIndex));
  ordered_json summary;
  summary["size"] = index.size();
  summary["shards"] = index.num_shards();
  summary["hnsw"] = config.index.use_hnsw;
  summary["quantize"] = config.index.quantize;
  return finish(run, "build-index", {kVectors}, {}, {kDenseIndex}, clock, summary);
}

StageOutcome stage_train_rag(const RunConfig &config) {
  Stopwatch clock;
  RunDir run(config);
  auto data = load_segmented(run, config);
  const auto train = capped_train(config, data.train);
  const auto retriever = load_retriever(run, data.vocab, config.retriever);
  const auto index = load_serving_index(run);
  const auto ptoks = tokenize_passages(data.vocab, data.passages);
  const auto result =
      train_rag_model(config, train, data.vocab, retriever.encoders, index, ptoks);
  run.ensure_parent(kRagQuery);
  save_encoder(run.path(kRagQuery), result.query_encoder, data.vocab.hash());
  save_generator(run.path(kRagGenerator), result.generator, data.vocab.hash());
  ordered_json summary;
  summary["retriever"] = config.retriever;
  summary["examples"] = train.size();
  summary["epoch_losses"] = losses_json(result.epoch_losses);
  return finish(run, "train-rag",
                {kPassages, kVocab, retriever.query_path, retriever.context_path, kVectors,
                 kDenseIndex},
                {config.paths.train}, {kRagQuery, kRagGenerator}, clock, summary);
}

namespace {

struct RagModel {
  EncoderParams query_encoder;
  GeneratorParams generator;
};

RagModel load_rag_model(const RunDir &run, const Vocab &vocab) {
  run.require_artifact(kRagQuery, "train-rag");
  run.require_artifact(kRagGenerator, "train-rag");
  return {load_encoder(run.path(kRagQuery), vocab.hash()),
          load_generator(run.path(kRagGenerator), vocab.hash())};
}

}  // namespace

StageOutcome stage_predict(const RunConfig &config,
                           const std::optional<std::string> &candidates_path) {
  Stopwatch clock;
  RunDir run(config);
  auto data = load_segmented(run, config);
  const auto model = load_rag_model(run, data.vocab);
  const auto index = load_serving_index(run);
  const auto ptoks = tokenize_passages(data.vocab, data.passages);
  const std::vector<std::string> run_inputs{kPassages, kVocab, kVectors, kDenseIndex, kRagQuery,
                                            kRagGenerator};
  run.ensure_parent(kPredictions);
  if (!candidates_path) {
    const auto preds = predict_answers(config, model.query_encoder, model.generator, index,
                                       data.passages, ptoks, data.vocab, data.dev);
    write_predictions_jsonl(run.path(kPredictions), preds);
    ordered_json summary;
    summary["predictions"] = preds.size();
    return finish(run, "predict", run_inputs, {config.paths.dev}, {kPredictions}, clock,
                  summary);
  }
  const auto candidates = read_candidates_jsonl(*candidates_path);
  const auto ranked = rank_with_generator(config, model.query_encoder, model.generator, index,
                                          data.passages, ptoks, data.vocab, data.dev, candidates);
  write_ranked_jsonl(run.path(kRanked), ranked);
  write_predictions_jsonl(run.path(kConstrained), top_candidates(ranked));
  ordered_json summary;
  summary["predictions"] = ranked.size();
  return finish(run, "predict-candidates", run_inputs, {config.paths.dev, *candidates_path},
                {kRanked, kConstrained}, clock, summary);
}

StageOutcome stage_evaluate(const RunConfig &config, const std::string &style) {
  Stopwatch clock;
  RunDir run(config);
  require(style == "kilt" || style == "ranking",
          "--style must be kilt or ranking, got '" + style + "'");
  auto data = load_segmented(run, config);
  run.ensure_parent(kMetrics);
  if (style == "kilt") {
    run.require_artifact(kPredictions, "predict");
    const auto preds = read_predictions_jsonl(run.path(kPredictions));
    const auto eval = evaluate_kilt(preds, data.dev, data.passages);
    write_file(run.path(kMetrics), report_json(eval));
    ordered_json summary;
    summary["r_precision"] = eval.metrics.r_precision;
    summary["accuracy"] = eval.metrics.accuracy;
    summary["kilt_ac"] = eval.metrics.kilt_ac;
    return finish(run, "evaluate-kilt", {kPassages, kVocab, kPredictions}, {config.paths.dev},
                  {kMetrics}, clock, summary);
  }
  run.require_artifact(kRanked, "predict-candidates");
  const auto eval = evaluate_ranking(read_ranked_jsonl(run.path(kRanked)), data.dev);
  write_file(run.path(kRanking), report_json(eval));
  ordered_json summary;
  summary["mrr"] = eval.metrics.mrr;
  summary["hit_at_1"] = eval.metrics.hit_at_1;
  return finish(run, "evaluate-ranking", {kPassages, kVocab, kRanked}, {config.paths.dev},
                {kRanking}, clock, summary);
}

StageOutcome stage_baseline(const RunConfig &config, const std::string &scorer,
                            const std::optional<std::string> &candidates_path) {
  Stopwatch clock;
  RunDir run(config);
  require(scorer == "pmi" || scorer == "offset" || scorer == "perplexity",
          "--scorer must be pmi, offset or perplexity, got '" + scorer + "'");
  auto data = load_segmented(run, config);
  std::vector<std::string> run_inputs{kPassages, kVocab};
  std::vector<std::string> external{config.paths.corpus, config.paths.dev};
  CandidateMap candidates;
  if (candidates_path) {
    candidates = read_candidates_jsonl(*candidates_path);
    external.push_back(*candidates_path);
  } else {
    run.require_artifact(kCandidates, "segment");
    candidates = read_candidates_jsonl(run.path(kCandidates));
    run_inputs.push_back(kCandidates);
  }

  std::function<double(const SlotInstance &, const std::string &)> score;
  bool lower_is_better = false;
  CooccurrenceIndex cooc;
  EncoderParams encoder;
  GeneratorParams gen;
  if (scorer == "pmi") {
    const auto docs = read_jsonl_corpus(config.paths.corpus);
    cooc = build_cooccurrence_index(data.passages, passage_entities(docs, data.passages));
    score = [&](const SlotInstance &inst, const std::string &v) {
      return pmi_score(cooc, inst.subject, v);
    };
  } else if (scorer == "offset") {
    const auto r = load_retriever(run, data.vocab, config.retriever);
    run_inputs.push_back(r.context_path);
    encoder = r.encoders.context_encoder;
    score = [&](const SlotInstance &inst, const std::string &v) {
      const auto e = text_embedding(encoder, data.vocab, inst.subject);
      const auto s = text_embedding(encoder, data.vocab, inst.relation);
      const auto c = text_embedding(encoder, data.vocab, v);
      return offset_score(e, s, c);
    };
  } else {
    run.require_artifact(kRagGenerator, "train-rag");
    run_inputs.push_back(kRagGenerator);
    gen = load_generator(run.path(kRagGenerator), data.vocab.hash());
    lower_is_better = true;
    score = [&](const SlotInstance &inst, const std::string &v) {
      return perplexity_score(gen, data.vocab, inst.subject, inst.relation, v);
    };
  }

  std::vector<RankedPrediction> ranked;
  for (const auto &inst : data.dev) {
    const auto it = candidates.find(inst.query_id);
    require(it != candidates.end(), "no candidates for query " + inst.query_id);
    const auto scored = rank_candidates(
        it->second, [&](const std::string &v) { return score(inst, v); }, lower_is_better);
    RankedPrediction rp;
    rp.ranked.query_id = inst.query_id;
    for (const auto &s : scored) {
      rp.ranked.ranked.push_back(s.candidate);
      rp.scores.push_back(s.score);
    }
    ranked.push_back(std::move(rp));
  }
  std::vector<RankedInstance> plain;
  for (const auto &r : ranked) plain.push_back(r.ranked);
  const auto eval = evaluate_ranking(plain, data.dev);
  const std::string ranked_out = "reports/baseline_" + scorer + ".jsonl";
  const std::string report_out = "reports/baseline_" + scorer + ".json";
  run.ensure_parent(ranked_out);
  write_ranked_jsonl(run.path(ranked_out), ranked);
  write_file(run.path(report_out), report_json(eval));
  ordered_json summary;
  summary["mrr"] = eval.metrics.mrr;
  summary["hit_at_1"] = eval.metrics.hit_at_1;
  return finish(run, "baseline-" + scorer, run_inputs, external, {ranked_out, report_out}, clock,
                summary);
}

StageOutcome stage_adapt(const RunConfig &config, const AdaptOptions &options) {
  Stopwatch clock;
  RunDir run(config);
  require(!options.corpus.empty(), "adapt needs --corpus");
  run.require_external(options.corpus);
  require(options.few_shot == 0 || options.train.has_value(),
          "adapt --few-shot n > 0 needs --train with instances to sample from");
  auto data = load_segmented(run, config);
  const auto retriever = load_retriever(run, data.vocab, config.retriever);
  const auto model = load_rag_model(run, data.vocab);
  std::vector<std::string> run_inputs{kPassages, kVocab, retriever.context_path, kRagQuery,
                                      kRagGenerator};
  std::vector<std::string> external{options.corpus};

  const std::string base = "adapt/" + std::to_string(options.few_shot) + "-shot/";
  const auto docs = read_jsonl_corpus(options.corpus);
  const auto passages = segment_documents(docs, config.max_passage_tokens);
  require(!passages.empty(), "adapt: " + options.corpus + " yields no passages");
  long unknown = 0;
  for (const auto &p : passages) {
    for (TokenId t : tokenize(data.vocab, passage_encoder_text(p))) unknown += t == Vocab::kUnk;
  }
  if (unknown > 0) {
    std::cerr << "warning: " << unknown << " tokens of " << options.corpus
              << " are outside the vocabulary; list the corpus in paths.vocab_corpora before "
                 "segment\n";
  }
  const std::string passages_out = base + "corpus/passages.jsonl";
  const std::string index_out = base + "index/dense.idx";
  run.ensure_parent(passages_out);
  run.ensure_parent(index_out);
  write_jsonl_passages(run.path(passages_out), passages);
  const auto index = build_serving_index(config, retriever.encoders.context_encoder, data.vocab,
                                         passages);
  index.save(run.path(index_out));
  std::vector<std::string> outputs{passages_out, index_out};
  const auto ptoks = tokenize_passages(data.vocab, passages);

  EncoderParams query = model.query_encoder;
  GeneratorParams gen = model.generator;
  ordered_json summary;
  summary["passages"] = passages.size();
  summary["unknown_tokens"] = unknown;
  summary["few_shot"] = options.few_shot;
  if (options.few_shot > 0) {
    external.push_back(*options.train);
    const auto pool = read_jsonl_instances(*options.train);
    const EncoderPair encoders{model.query_encoder, retriever.encoders.context_encoder};
    const auto tuned = few_shot_adapt(config, pool, options.few_shot, data.vocab, encoders, gen,
                                      index, ptoks);
    query = tuned.query_encoder;
    gen = tuned.generator;
    const std::string q_out = base + "checkpoints/rag.query.ckpt";
    const std::string g_out = base + "checkpoints/rag.generator.ckpt";
    run.ensure_parent(q_out);
    save_encoder(run.path(q_out), query, data.vocab.hash());
    save_generator(run.path(g_out), gen, data.vocab.hash());
    outputs.push_back(q_out);
    outputs.push_back(g_out);
    summary["epoch_losses"] = losses_json(tuned.epoch_losses);
  }
  if (options.dev) {
    external.push_back(*options.dev);
    const auto dev = read_jsonl_instances(*options.dev);
    CandidateMap candidates;
    if (options.candidates) {
      external.push_back(*options.candidates);
      candidates = read_candidates_jsonl(*options.candidates);
    } else {
      candidates = cooccurrence_candidates(docs, passages, dev);
    }
    const auto ranked =
        rank_with_generator(config, query, gen, index, passages, ptoks, data.vocab, dev,
                            candidates);
    std::vector<RankedInstance> plain;
    for (const auto &r : ranked) plain.push_back(r.ranked);
    const auto eval = evaluate_ranking(plain, dev);
    const std::string ranked_out = base + "reports/ranked.jsonl";
    const std::string report_out = base + "reports/ranking.json";
    run.ensure_parent(ranked_out);
    write_ranked_jsonl(run.path(ranked_out), ranked);
    write_file(run.path(report_out), report_json(eval));
    outputs.push_back(ranked_out);
    outputs.push_back(report_out);
    summary["mrr"] = eval.metrics.mrr;
    summary["hit_at_1"] = eval.metrics.hit_at_1;
  }
  return finish(run, "adapt-" + std::to_string(options.few_shot) + "-shot", run_inputs, external,
                outputs, clock, summary);
}

}  // namespace kgi
