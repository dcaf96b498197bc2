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

// kgi: command-line driver for the slot-filling pipeline.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kgi/common.h"
#include "kgi/pipeline.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

void print_outcome(const kgi::StageOutcome &outcome) {
  nlohmann::ordered_json j;
  j["stage"] = outcome.stage;
  j["outputs"] = outcome.outputs;
  j["summary"] = outcome.summary;
  std::cout << j.dump() << "\n";
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"kgi: retrieval-augmented slot filling with dense retrieval"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> run_dir;
  std::optional<long> max_train;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Base seed; every stage seed derives from it");
  app.add_option("--run-dir", run_dir, "Run directory (overrides run_dir)");
  app.add_option("--set", overrides, "Override a config key, e.g. --set dpr.epochs=2")
      ->take_all();
  app.add_option("--max-train-instances", max_train,
                 "Use only the first N training instances (default: all)");

  std::string synth_out;
  auto *synth = app.add_subcommand("synth", "Write a synthetic benchmark (corpus, train, dev)");
  synth->add_option("--out", synth_out, "Output directory")->required();

  auto *segment = app.add_subcommand("segment", "Split the corpus into passages, build the vocabulary");
  auto *build_sparse = app.add_subcommand("build-sparse", "Build the BM25 index");

  std::string mine_mode = "bm25";
  auto *mine = app.add_subcommand("mine-negatives", "Mine hard negatives for DPR training");
  mine->add_option("--mode", mine_mode, "bm25 or dense")
      ->check(CLI::IsMember({"bm25", "dense"}))
      ->capture_default_str();

  std::string dpr_triples = "bm25";
  auto *train_dpr = app.add_subcommand("train-dpr", "Train the bi-encoder on mined triples");
  train_dpr->add_option("--triples", dpr_triples, "bm25 (from scratch) or dense (continue)")
      ->check(CLI::IsMember({"bm25", "dense"}))
      ->capture_default_str();

  auto *encode = app.add_subcommand("encode-corpus", "Encode passages with the retriever");
  auto *build_index = app.add_subcommand("build-index", "Build the dense serving index");
  auto *run_dns = app.add_subcommand("run-dns", "Dense negative sampling rounds from the BM25 retriever");
  auto *train_rag = app.add_subcommand("train-rag", "Train query encoder and generator end to end");

  std::optional<std::string> predict_candidates;
  auto *predict = app.add_subcommand("predict", "Answer dev queries");
  predict->add_option("--candidates", predict_candidates,
                      "JSONL {query_id, candidates}; ranks candidates instead of free generation")
      ->check(CLI::ExistingFile);

  std::string eval_style = "kilt";
  auto *evaluate = app.add_subcommand("evaluate", "Score predictions");
  evaluate->add_option("--style", eval_style, "kilt or ranking")
      ->check(CLI::IsMember({"kilt", "ranking"}))
      ->capture_default_str();

  std::string scorer;
  std::optional<std::string> baseline_candidates;
  auto *baseline = app.add_subcommand("baseline", "Rank candidates with a zero-shot scorer");
  baseline->add_option("--scorer", scorer, "pmi, offset or perplexity")
      ->check(CLI::IsMember({"pmi", "offset", "perplexity"}))
      ->required();
  baseline->add_option("--candidates", baseline_candidates, "JSONL {query_id, candidates}")
      ->check(CLI::ExistingFile);

  kgi::AdaptOptions adapt_opts;
  auto *adapt = app.add_subcommand("adapt", "Serve a new corpus by index substitution");
  adapt->add_option("--corpus", adapt_opts.corpus, "New corpus JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  adapt->add_option("--few-shot", adapt_opts.few_shot, "Examples per relation to fine-tune on")
      ->capture_default_str();
  adapt->add_option("--train", adapt_opts.train, "Instances to sample few-shot examples from")
      ->check(CLI::ExistingFile);
  adapt->add_option("--dev", adapt_opts.dev, "Instances for ranked evaluation")
      ->check(CLI::ExistingFile);
  adapt->add_option("--candidates", adapt_opts.candidates, "JSONL {query_id, candidates}")
      ->check(CLI::ExistingFile);

  auto *show_config = app.add_subcommand("config", "Print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    if (run_dir) overrides.push_back("run_dir=" + nlohmann::json(*run_dir).dump());
    if (max_train) overrides.push_back("max_train_instances=" + std::to_string(*max_train));
    const kgi::RunConfig config = kgi::load_run_config(config_path, overrides);

    if (*show_config) {
      std::cout << kgi::config_to_json(config).dump(2) << "\n";
    } else if (*synth) {
      print_outcome(kgi::stage_synth(config, synth_out));
    } else if (*segment) {
      print_outcome(kgi::stage_segment(config));
    } else if (*build_sparse) {
      print_outcome(kgi::stage_build_sparse(config));
    } else if (*mine) {
      print_outcome(kgi::stage_mine_negatives(config, mine_mode));
    } else if (*train_dpr) {
      print_outcome(kgi::stage_train_dpr(config, dpr_triples));
    } else if (*encode) {
      print_outcome(kgi::stage_encode_corpus(config));
    } else if (*build_index) {
      print_outcome(kgi::stage_build_index(config));
    } else if (*run_dns) {
      print_outcome(kgi::stage_run_dns(config));
    } else if (*train_rag) {
      print_outcome(kgi::stage_train_rag(config));
    } else if (*predict) {
      print_outcome(kgi::stage_predict(config, predict_candidates));
    } else if (*evaluate) {
      print_outcome(kgi::stage_evaluate(config, eval_style));
    } else if (*baseline) {
      print_outcome(kgi::stage_baseline(config, scorer, baseline_candidates));
    } else if (*adapt) {
      print_outcome(kgi::stage_adapt(config, adapt_opts));
    }
  } catch (const kgi::ValidationError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const kgi::StageError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  } catch (const nlohmann::json::exception &e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception &e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}
