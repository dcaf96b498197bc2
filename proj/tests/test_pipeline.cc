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

#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "kgi/common.h"
#include "kgi/pipeline.h"
#include "kgi/synth.h"
#include "test_util.h"

namespace kgi {
namespace {

namespace fs = std::filesystem;

TEST(Synth, DeterministicAndWellFormed) {
  SyntheticSpec spec;
  spec.n_entities = 50;
  const auto a = generate_synthetic_benchmark(spec);
  const auto b = generate_synthetic_benchmark(spec);
  ASSERT_EQ(a.corpus.size(), b.corpus.size());
  for (std::size_t i = 0; i < a.corpus.size(); ++i) {
    EXPECT_EQ(a.corpus[i].paragraphs, b.corpus[i].paragraphs);
  }
  std::set<std::string> docs, queries;
  for (const auto &d : a.corpus) docs.insert(d.doc_id);
  EXPECT_EQ(docs.size(), a.corpus.size());
  const auto relations = synthetic_relations("wiki");
  EXPECT_GE(relations.size(), spec.n_relations);
  for (const auto *split : {&a.train, &a.dev}) {
    for (const auto &inst : *split) {
      EXPECT_TRUE(queries.insert(inst.query_id).second);
      ASSERT_FALSE(inst.answers.empty());
      ASSERT_FALSE(inst.provenance.empty());
      for (const auto &ref : inst.provenance) {
        EXPECT_TRUE(docs.count(ref.doc_id));
      }
    }
  }
  EXPECT_EQ(a.train.size() + a.dev.size(), spec.n_entities * spec.n_relations);
  spec.seed = 8;
  const auto c = generate_synthetic_benchmark(spec);
  bool differs = false;
  for (std::size_t i = 0; i < std::min(a.train.size(), c.train.size()); ++i) {
    differs = differs || a.train[i].answers != c.train[i].answers;
  }
  EXPECT_TRUE(differs);
}

TEST(Synth, DomainsAreDisjointButShareNames) {
  SyntheticSpec wiki, news;
  news.domain = "news";
  news.seed = 11;
  news.n_entities = 200;
  news.values_per_relation = 4;
  std::set<std::string> wr;
  for (const auto &r : synthetic_relations("wiki")) wr.insert(r);
  for (const auto &r : synthetic_relations("news")) EXPECT_FALSE(wr.count(r)) << r;
  // Both domains draw subjects from one stock of first and last names.
  std::set<std::string> firsts, lasts;
  for (const auto *spec : {&wiki, &news}) {
    for (const auto &i : generate_synthetic_benchmark(*spec).train) {
      const auto words = split_words(i.subject);
      ASSERT_EQ(words.size(), 2u) << i.subject;
      firsts.insert(words[0]);
      lasts.insert(words[1]);
    }
  }
  EXPECT_LE(firsts.size(), wiki.first_names);
  EXPECT_LE(lasts.size(), wiki.last_names);
}

TEST(Synth, ValidateRejectsBadSpecs) {
  SyntheticSpec s;
  s.domain = "sports";
  EXPECT_THROW(s.validate(), ValidationError);
  s = SyntheticSpec{};
  s.n_entities = s.first_names * s.last_names + 1;
  EXPECT_THROW(s.validate(), ValidationError);
  s = SyntheticSpec{};
  s.n_relations = 0;
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(Synth, SamplePerRelation) {
  SyntheticSpec spec;
  spec.n_entities = 30;
  const auto b = generate_synthetic_benchmark(spec);
  const auto sample = sample_per_relation(b.train, 2);
  std::map<std::string, int> counts;
  for (const auto &i : sample) ++counts[i.relation];
  for (const auto &[r, c] : counts) EXPECT_EQ(c, 2) << r;
  EXPECT_TRUE(sample_per_relation(b.train, 0).empty());
}

TEST(Config, DefaultsAndDerivedSeeds) {
  const RunConfig c;
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.encoder_seed(), 1u);
  EXPECT_EQ(c.dpr_seed(), 3u);
  EXPECT_EQ(c.rag_seed(), 4u);
  EXPECT_EQ(c.generator_seed(), 5u);
  EXPECT_EQ(c.index_seed(), 1234u);
  EXPECT_EQ(c.dpr_config().seed, 3u);
  EXPECT_EQ(c.rag_config().seed, 4u);
  EXPECT_EQ(c.index_config().seed, 1234u);
  EXPECT_EQ(c.dns_config().index.shards, c.dns.shards);
  EXPECT_FALSE(c.dns_config().index.quantize);
  EXPECT_EQ(c.k, 5u);
  EXPECT_EQ(c.max_train_instances, 0);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c;
  c.seed = 9;
  c.dpr.epochs = 7;
  c.paths.vocab_corpora = {"x.jsonl"};
  c.synth.domain = "news";
  const auto j = config_to_json(c);
  const auto back = config_from_json(j);
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.dpr_seed(), 11u);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(config_from_json(nlohmann::ordered_json::parse(R"({"dpr": {"lr": 1}})")),
               ValidationError);
  EXPECT_THROW(config_from_json(nlohmann::ordered_json::parse(R"({"bogus": 1})")),
               ValidationError);
  EXPECT_THROW(config_from_json(nlohmann::ordered_json::parse(R"({"k": "five"})")),
               ValidationError);
  EXPECT_THROW(config_from_json(nlohmann::ordered_json::parse(R"({"retriever": "tfidf"})")),
               ValidationError);
}

TEST(Config, Overrides) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  apply_override(doc, "dpr.epochs=3");
  apply_override(doc, "retriever=bm25");
  apply_override(doc, "paths.vocab_corpora=[\"a\",\"b\"]");
  const auto c = config_from_json(doc);
  EXPECT_EQ(c.dpr.epochs, 3);
  EXPECT_EQ(c.retriever, "bm25");
  EXPECT_EQ(c.paths.vocab_corpora, (std::vector<std::string>{"a", "b"}));
  EXPECT_THROW(apply_override(doc, "no_equals_sign"), ValidationError);

  TempDir dir;
  write_file(dir.file("c.json"), R"({"k": 3, "dpr": {"epochs": 2}})");
  const auto loaded = load_run_config(dir.file("c.json"), {"dpr.epochs=5"});
  EXPECT_EQ(loaded.k, 3u);
  EXPECT_EQ(loaded.dpr.epochs, 5);
  EXPECT_EQ(loaded.dpr.batch_size, RunConfig{}.dpr.batch_size);
}

// A tiny run through every stage, then the staleness checks.
class PipelineRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    config_ = new RunConfig();
    RunConfig &c = *config_;
    c.run_dir = dir_->file("run");
    c.synth.n_entities = 60;
    c.synth.values_per_relation = 10;
    c.paths.corpus = dir_->file("data/corpus.jsonl");
    c.paths.train = dir_->file("data/train.jsonl");
    c.paths.dev = dir_->file("data/dev.jsonl");
    c.d = c.d_g = 16;
    c.dpr.epochs = 1;
    c.rag.epochs = 1;
    c.dns.extra_epochs = 1;
    stage_synth(c, dir_->file("data"));
    stage_segment(c);
    stage_build_sparse(c);
    stage_mine_negatives(c, "bm25");
    stage_train_dpr(c, "bm25");
    stage_run_dns(c);
    stage_encode_corpus(c);
    stage_build_index(c);
    stage_train_rag(c);
    stage_predict(c, std::nullopt);
    kilt_ = new StageOutcome(stage_evaluate(c, "kilt"));
  }
  static void TearDownTestSuite() {
    delete kilt_;
    delete config_;
    delete dir_;
  }
  static std::string run_file(const std::string &rel) { return config_->run_dir + "/" + rel; }

  static TempDir *dir_;
  static RunConfig *config_;
  static StageOutcome *kilt_;
};

TempDir *PipelineRun::dir_ = nullptr;
RunConfig *PipelineRun::config_ = nullptr;
StageOutcome *PipelineRun::kilt_ = nullptr;

TEST_F(PipelineRun, WritesArtifactsAndManifests) {
  for (const char *rel : {"corpus/passages.jsonl", "corpus/vocab.txt", "index/sparse.json",
                          "triples/bm25.jsonl", "checkpoints/dpr_dns.query.ckpt",
                          "checkpoints/dpr_dns.context.ckpt", "index/vectors.bin",
                          "index/dense.idx", "checkpoints/rag.generator.ckpt",
                          "reports/predictions.jsonl", "reports/metrics.json"}) {
    EXPECT_TRUE(fs::exists(run_file(rel))) << rel;
  }
  const auto manifest = nlohmann::json::parse(read_file(run_file("manifests/train-rag.json")));
  EXPECT_EQ(manifest.at("stage"), "train-rag");
  EXPECT_EQ(manifest.at("seed"), 1);
  ASSERT_FALSE(manifest.at("inputs").empty());
  for (const auto &in : manifest.at("inputs")) {
    EXPECT_EQ(in.at("sha256").get<std::string>().size(), 64u);
  }
  for (const auto &out : manifest.at("outputs")) {
    EXPECT_EQ(out.at("sha256"), sha256_file(run_file(out.at("path").get<std::string>())));
  }
  const auto metrics = nlohmann::json::parse(read_file(run_file("reports/metrics.json")));
  EXPECT_EQ(metrics.at("metrics").at("n_instances"), 60);
  EXPECT_EQ(kilt_->stage, "evaluate-kilt");
}

TEST_F(PipelineRun, ConfigChangeMakesDownstreamStale) {
  RunConfig changed = *config_;
  changed.d = 8;
  EXPECT_THROW(stage_build_index(changed), StageError);
  try {
    stage_build_index(changed);
  } catch (const StageError &e) {
    EXPECT_NE(std::string(e.what()).find("kgi"), std::string::npos) << e.what();
  }
}

TEST_F(PipelineRun, TamperedArtifactIsDetected) {
  const std::string path = run_file("reports/predictions.jsonl");
  const std::string saved = read_file(path);
  write_file(path, saved + "\n");
  EXPECT_THROW(stage_evaluate(*config_, "kilt"), StageError);
  write_file(path, saved);
  EXPECT_NO_THROW(stage_evaluate(*config_, "kilt"));
}

TEST_F(PipelineRun, StageSeesUnchangedUpstream) {
  // Rerunning an unchanged stage keeps every downstream artifact valid.
  const auto before = read_file(run_file("reports/metrics.json"));
  stage_evaluate(*config_, "kilt");
  EXPECT_EQ(read_file(run_file("reports/metrics.json")), before);
}

TEST_F(PipelineRun, BadStageArgumentsAreValidationErrors) {
  EXPECT_THROW(stage_mine_negatives(*config_, "tfidf"), ValidationError);
  EXPECT_THROW(stage_evaluate(*config_, "bleu"), ValidationError);
  EXPECT_THROW(stage_baseline(*config_, "oracle", std::nullopt), ValidationError);
}

TEST(PipelineMissing, EmptyRunDirIsStageError) {
  TempDir dir;
  RunConfig c;
  c.run_dir = dir.file("nothing");
  EXPECT_THROW(stage_build_sparse(c), StageError);
  EXPECT_THROW(stage_train_rag(c), StageError);
}

}  // namespace
}  // namespace kgi
