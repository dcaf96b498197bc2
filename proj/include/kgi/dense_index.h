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

#ifndef KGI_DENSE_INDEX_H_
#define KGI_DENSE_INDEX_H_

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgi/biencoder.h"
#include "kgi/corpus.h"

namespace kgi {

// n x d vectors; row i belongs to ids[i].
struct VectorMatrix {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<double> data;

  std::size_t size() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  void append(const std::string &id, std::span<const double> v);
  void validate() const;
  bool operator==(const VectorMatrix &) const = default;
};

// Row i = encode(context_encoder, tokenize(title + " " + text)). Rows are
// computed independently, so the result does not depend on `workers`.
VectorMatrix encode_corpus(const EncoderParams &context_encoder, const Vocab &vocab,
                           const std::vector<Passage> &passages, std::size_t workers = 1);

// Brute-force inner-product top-k; the oracle for every ANN path.
std::vector<RetrievalResult> exact_search(const VectorMatrix &matrix, std::span<const double> q,
                                          std::size_t k);

struct HnswParams {
  std::size_t M = 16;
  std::size_t ef_construction = 200;
  uint64_t seed = 1234;
};

// Hierarchical navigable small-world graph maximizing inner product.
class HnswIndex {
 public:
  HnswIndex(std::shared_ptr<const VectorMatrix> vectors, HnswParams params);

  std::vector<RetrievalResult> search(std::span<const double> q, std::size_t k,
                                      std::size_t ef_search) const;

  const HnswParams &params() const { return params_; }
  const VectorMatrix &vectors() const { return *vectors_; }
  std::size_t size() const { return levels_.size(); }
  int max_level() const { return max_level_; }
  uint32_t entry_point() const { return entry_; }
  int level(uint32_t node) const { return levels_[node]; }
  const std::vector<uint32_t> &neighbors(uint32_t node, int layer) const {
    return links_[node][static_cast<std::size_t>(layer)];
  }
  std::size_t max_degree(int layer) const { return layer == 0 ? 2 * params_.M : params_.M; }
  // Edges added after insertion to make every node reachable on layer 0.
  std::size_t repaired_edges() const { return repaired_; }

  // Throws std::logic_error if a structural invariant is broken.
  void check_invariants() const;

  // Serialization of the graph alone; vectors are stored by the caller.
  void write_graph(std::ostream &out) const;
  static HnswIndex read_graph(std::istream &in, std::shared_ptr<const VectorMatrix> vectors,
                              HnswParams params);

 private:
  struct Candidate {
    double score;
    uint32_t node;
  };
  class Visited;

  HnswIndex(std::shared_ptr<const VectorMatrix> vectors, HnswParams params, bool);

  double similarity(uint32_t a, uint32_t b) const;
  double similarity(std::span<const double> q, uint32_t node) const;
  bool better(const Candidate &a, const Candidate &b) const;
  std::vector<Candidate> search_layer(std::span<const double> q,
                                      const std::vector<Candidate> &entry, std::size_t ef,
                                      int layer, Visited &visited) const;
  std::vector<uint32_t> select_neighbors(uint32_t base, std::vector<Candidate> candidates,
                                         std::size_t max_count) const;
  void insert(uint32_t node, int level, Visited &visited);
  void repair_connectivity();

  std::shared_ptr<const VectorMatrix> vectors_;
  HnswParams params_;
  std::vector<int> levels_;
  std::vector<std::vector<std::vector<uint32_t>>> links_;  // node -> layer -> neighbors
  std::vector<uint32_t> id_rank_;  // rank of ids[i] in sorted id order, for ties
  uint32_t entry_ = 0;
  int max_level_ = -1;
  std::size_t repaired_ = 0;
};

HnswIndex build_hnsw(std::shared_ptr<const VectorMatrix> matrix, std::size_t M,
                     std::size_t ef_construction, uint64_t seed);
std::vector<RetrievalResult> hnsw_search(const HnswIndex &index, std::span<const double> q,
                                         std::size_t k, std::size_t ef_search);

// Per-dimension 8-bit scalar quantization.
struct SQ8Matrix {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<double> mins;
  std::vector<double> maxs;
  std::vector<double> steps;  // (max - min) / 255
  std::vector<uint8_t> codes;

  std::size_t size() const { return ids.size(); }
  double decode(std::size_t row, std::size_t j) const;
};

SQ8Matrix quantize(const VectorMatrix &matrix);
VectorMatrix dequantize(const SQ8Matrix &codes);

struct DenseIndexConfig {
  bool use_hnsw = true;
  std::size_t M = 16;
  std::size_t ef_construction = 200;
  std::size_t ef_search = 128;
  std::size_t shards = 1;
  bool quantize = false;
  uint64_t seed = 1234;
};

// Serving index over a passage set: S shards, each exact or HNSW, optionally
// over SQ8-decoded vectors. Result indices are global passage positions.
class DenseIndex {
 public:
  DenseIndex(const VectorMatrix &matrix, const DenseIndexConfig &config);

  std::vector<RetrievalResult> search(std::span<const double> q, std::size_t k) const;
  // The vector actually scored for a passage (decoded when quantized).
  std::span<const double> vector(std::size_t global_index) const;

  std::size_t size() const { return locations_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t num_shards() const { return shards_.size(); }
  const DenseIndexConfig &config() const { return config_; }
  // Process-unique id assigned at construction or load.
  uint64_t build_id() const { return build_id_; }
  static uint64_t builds_so_far();

  void save(const std::string &path) const;
  static DenseIndex load(const std::string &path);

 private:
  struct Shard {
    std::shared_ptr<VectorMatrix> vectors;  // decoded values when quantized
    std::optional<SQ8Matrix> codes;
    std::optional<HnswIndex> graph;
    std::vector<std::size_t> global;  // shard row -> global index
  };
  DenseIndex() = default;

  DenseIndexConfig config_;
  std::size_t dim_ = 0;
  std::vector<Shard> shards_;
  std::vector<std::pair<uint32_t, std::size_t>> locations_;  // global -> (shard, row)
  uint64_t build_id_ = 0;
};

// A DenseIndex with S > 1 is the sharded index.
using ShardedIndex = DenseIndex;

inline std::vector<RetrievalResult> shard_search(const ShardedIndex &sharded,
                                                 std::span<const double> q, std::size_t k) {
  return sharded.search(q, k);
}

// Merges per-shard top-k lists: the sharded search contract.
std::vector<RetrievalResult> merge_shard_results(
    std::vector<std::vector<RetrievalResult>> per_shard, std::size_t k);

}  // namespace kgi

#endif  // KGI_DENSE_INDEX_H_
