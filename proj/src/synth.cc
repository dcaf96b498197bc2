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

#include "kgi/synth.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "kgi/common.h"

namespace kgi {

namespace {

struct RelationTemplates {
  std::string label;
  std::vector<std::string> templates;  // "{s}" subject, "{o}" object
};

const std::vector<RelationTemplates> &domain_relations(const std::string &domain) {
  // Every template has three words besides subject and object, so passages
  // of one relation only differ in names and fillers.
  static const std::vector<RelationTemplates> wiki = {
      {"employee of",
       {"{s} is employed by {o}", "{s} works for firm {o}", "{s} joined staff at {o}"}},
      {"city of birth",
       {"{s} was born in {o}", "{s} comes from town {o}", "{s} grew up in {o}"}},
      {"spouse", {"{s} is married to {o}", "{s} is wed to {o}", "{s} shares life with {o}"}},
      {"schools attended",
       {"{s} studied at school {o}", "{s} graduated from college {o}", "{s} earned degree at {o}"}},
      {"title", {"{s} served as the {o}", "{s} held post of {o}", "{s} was appointed as {o}"}},
      {"religion", {"{s} follows faith of {o}", "{s} is devout in {o}"}},
      {"country of residence", {"{s} now lives in {o}", "{s} resides in land {o}"}},
      {"member of", {"{s} belongs to group {o}", "{s} is part of {o}"}},
  };
  static const std::vector<RelationTemplates> news = {
      {"headquarters", {"{s} is based in {o}", "{s} has offices in {o}"}},
      {"founded by", {"{s} was started by {o}", "{s} was created by {o}"}},
      {"product", {"{s} makes and sells {o}", "{s} is selling its {o}"}},
      {"chief executive", {"{s} is led by {o}", "{s} is run by {o}"}},
      {"parent company", {"{s} is owned by {o}", "{s} is unit of {o}"}},
  };
  if (domain == "wiki") return wiki;
  if (domain == "news") return news;
  throw ValidationError("unknown synthetic domain '" + domain + "'");
}

// Pronounceable nonsense words, unique within one generator.
class WordMaker {
 public:
  WordMaker(uint64_t seed, const std::string &consonants, std::set<std::string> reserved)
      : rng_(seed), consonants_(consonants), used_(std::move(reserved)) {}

  std::string next(std::size_t syllables) {
    static const std::string vowels = "aeiou";
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::string w;
      for (std::size_t i = 0; i < syllables; ++i) {
        w.push_back(consonants_[rng_.below(consonants_.size())]);
        w.push_back(vowels[rng_.below(vowels.size())]);
      }
      if (rng_.below(2) == 0) w.push_back(consonants_[rng_.below(consonants_.size())]);
      if (used_.insert(w).second) return w;
    }
    throw ValidationError("synthetic benchmark: word space exhausted");
  }

 private:
  Rng rng_;
  std::string consonants_;
  std::set<std::string> used_;
};

std::string fill(const std::string &tmpl, const std::string &s, const std::string &o) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 3, "{s}") == 0) {
      out += s;
      i += 3;
    } else if (tmpl.compare(i, 3, "{o}") == 0) {
      out += o;
      i += 3;
    } else {
      out.push_back(tmpl[i++]);
    }
  }
  return out;
}

std::string doc_id_for(const std::string &name) {
  std::string id = name;
  for (char &c : id) {
    if (c == ' ') c = '_';
  }
  return id;
}

}  // namespace

void SyntheticSpec::validate() const {
  require(n_entities >= 2, "synthetic spec: n_entities must be >= 2");
  require(n_relations >= 1, "synthetic spec: n_relations must be >= 1");
  require(n_relations <= domain_relations(domain).size(),
          "synthetic spec: domain '" + domain + "' has only " +
              std::to_string(domain_relations(domain).size()) + " relations");
  require(facts_per_entity >= 1, "synthetic spec: facts_per_entity must be >= 1");
  require(values_per_relation >= facts_per_entity,
          "synthetic spec: values_per_relation must cover facts_per_entity");
  require(first_names >= 1 && last_names >= 1, "synthetic spec: name stock must be non-empty");
  require(n_entities <= first_names * last_names,
          "synthetic spec: n_entities exceeds first_names * last_names");
  require(vocab_noise >= 1 || distractor_sentences == 0,
          "synthetic spec: distractors need vocab_noise >= 1");
  require(train_fraction >= 0.0 && dev_fraction >= 0.0 &&
              std::abs(train_fraction + dev_fraction - 1.0) <= 1e-9,
          "synthetic spec: split fractions must sum to 1");
}

std::vector<std::string> synthetic_relations(const std::string &domain) {
  std::vector<std::string> out;
  for (const auto &r : domain_relations(domain)) out.push_back(r.label);
  return out;
}

SyntheticBenchmark generate_synthetic_benchmark(const SyntheticSpec &spec) {
  spec.validate();
  const auto &relations = domain_relations(spec.domain);
  std::set<std::string> reserved;
  for (const char *domain : {"wiki", "news"}) {
    for (const auto &r : domain_relations(domain)) {
      for (const auto &w : split_words(r.label)) reserved.insert(w);
      for (const auto &t : r.templates) {
        for (const auto &w : split_words(fill(t, "", ""))) reserved.insert(w);
      }
    }
  }
  // Names are combinations of a small word stock, so subjects share words
  // and held-out subjects are new combinations of seen words.
  const std::size_t n_first = spec.first_names, n_last = spec.last_names;
  std::vector<std::string> first(n_first), last(n_last);
  {
    const std::string name_consonants = "bdfghjklmnprstvz";
    WordMaker first_maker(spec.name_seed, name_consonants, reserved);
    WordMaker last_maker(spec.name_seed + 1, name_consonants, reserved);
    for (auto &w : first) w = first_maker.next(2);
    for (auto &w : last) w = last_maker.next(3);
  }
  for (const auto &w : first) reserved.insert(w);
  for (const auto &w : last) reserved.insert(w);

  const bool news = spec.domain == "news";
  Rng rng(spec.seed);
  WordMaker words(rng.next(), news ? "bcdfgjklmnprstwz" : "bdfgklmnprstvz", reserved);
  std::vector<std::vector<std::string>> pools(spec.n_relations);
  for (auto &pool : pools) {
    pool.resize(spec.values_per_relation);
    for (auto &w : pool) w = words.next(3);
  }
  std::vector<std::string> noise(spec.vocab_noise);
  for (auto &w : noise) w = words.next(2);

  std::vector<std::string> names;
  std::set<std::string> seen_names;
  for (std::size_t attempt = 0; names.size() < spec.n_entities; ++attempt) {
    require(attempt < 100 * spec.n_entities,
            "synthetic benchmark: cannot draw distinct subject names");
    std::string name = first[rng.below(n_first)] + " " + last[rng.below(n_last)];
    if (seen_names.insert(name).second) names.push_back(std::move(name));
  }

  SyntheticBenchmark out;
  std::set<std::string> doc_ids;
  std::vector<std::vector<SlotInstance>> per_entity(spec.n_entities);
  for (std::size_t e = 0; e < spec.n_entities; ++e) {
    Document doc;
    doc.doc_id = doc_id_for(names[e]);
    require(doc_ids.insert(doc.doc_id).second,
            "synthetic benchmark: duplicate paragraph ids for " + doc.doc_id);
    doc.title = names[e];
    for (std::size_t r = 0; r < spec.n_relations; ++r) {
      SlotInstance inst;
      inst.query_id = spec.domain + "-" + std::to_string(e) + "-" + std::to_string(r);
      inst.subject = names[e];
      inst.relation = relations[r].label;
      std::vector<std::size_t> picks;
      while (picks.size() < spec.facts_per_entity) {
        const std::size_t v = rng.below(pools[r].size());
        if (std::find(picks.begin(), picks.end(), v) == picks.end()) picks.push_back(v);
      }
      for (std::size_t v : picks) {
        const std::string &object = pools[r][v];
        const auto &tmpls = relations[r].templates;
        std::string text = fill(tmpls[rng.below(tmpls.size())], names[e], object) + ".";
        const int para = static_cast<int>(doc.paragraphs.size());
        doc.entities.emplace_back(para, names[e]);
        doc.entities.emplace_back(para, object);
        for (std::size_t d = 0; d < spec.distractor_sentences; ++d) {
          std::size_t other = rng.below(spec.n_entities - 1);
          if (other >= e) ++other;
          std::string sentence = names[other];
          const std::size_t len = spec.distractor_words;
          for (std::size_t i = 0; i < len; ++i) sentence += " " + noise[rng.below(noise.size())];
          text += " " + sentence + ".";
          doc.entities.emplace_back(para, names[other]);
        }
        doc.paragraphs.push_back(std::move(text));
        inst.answers.push_back(object);
        inst.provenance.push_back({doc.doc_id, para});
      }
      per_entity[e].push_back(std::move(inst));
    }
    out.corpus.push_back(std::move(doc));
  }

  std::vector<std::size_t> order(spec.n_entities);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(spec.n_entities)));
  std::vector<bool> is_train(spec.n_entities, false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;
  for (std::size_t e = 0; e < spec.n_entities; ++e) {
    auto &dest = is_train[e] ? out.train : out.dev;
    for (auto &inst : per_entity[e]) dest.push_back(std::move(inst));
  }
  return out;
}

void write_synthetic_benchmark(const SyntheticBenchmark &bench, const std::string &dir) {
  std::filesystem::create_directories(dir);
  write_jsonl_corpus(dir + "/corpus.jsonl", bench.corpus);
  write_jsonl_instances(dir + "/train.jsonl", bench.train);
  write_jsonl_instances(dir + "/dev.jsonl", bench.dev);
}

std::vector<SlotInstance> sample_per_relation(const std::vector<SlotInstance> &instances,
                                              std::size_t n) {
  std::map<std::string, std::size_t> taken;
  std::vector<SlotInstance> out;
  for (const auto &inst : instances) {
    if (taken[inst.relation] >= n) continue;
    ++taken[inst.relation];
    out.push_back(inst);
  }
  return out;
}

}  // namespace kgi
