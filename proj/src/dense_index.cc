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

#include "kgi/dense_index.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "kgi/common.h"

namespace kgi {

namespace {

constexpr char kIndexMagic[] = "KGIDIDX1";
constexpr uint32_t kIndexVersion = 1;
constexpr uint32_t kMetricInnerProduct = 0;

std::atomic<uint64_t> g_index_builds{0};

}  // namespace

void VectorMatrix::append(const std::string &id, std::span<const double> v) {
  if (ids.empty() && dim == 0) dim = v.size();
  require(v.size() == dim, "VectorMatrix: row dimension mismatch");
  ids.push_back(id);
  data.insert(data.end(), v.begin(), v.end());
}

void VectorMatrix::validate() const {
  require(data.size() == ids.size() * dim, "VectorMatrix: data size mismatch");
  require(all_finite(data), "VectorMatrix: non-finite entry");
  std::vector<std::string> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
          "VectorMatrix: duplicate id");
}

VectorMatrix encode_corpus(const EncoderParams &context_encoder, const Vocab &vocab,
                           const std::vector<Passage> &passages, std::size_t workers) {
  require(workers >= 1, "encode_corpus: workers must be >= 1");
  const std::size_t n = passages.size();
  const std::size_t d = context_encoder.dim();
  VectorMatrix out;
  out.dim = d;
  out.ids.reserve(n);
  for (const auto &p : passages) out.ids.push_back(p.passage_id);
  out.data.assign(n * d, 0.0);
  std::vector<std::vector<TokenId>> tokens(n);
  for (std::size_t i = 0; i < n; ++i) {
    tokens[i] = tokenize(vocab, passage_encoder_text(passages[i]));
    require(!tokens[i].empty(),
            "encode_corpus: passage " + passages[i].passage_id + " has no tokens");
  }
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto v = encode(context_encoder, tokens[i]);
      std::copy(v.begin(), v.end(), out.row(i).begin());
    }
  };
  workers = std::min(workers, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      threads.emplace_back(work, begin, end);
    }
    for (auto &t : threads) t.join();
  }
  return out;
}

std::vector<RetrievalResult> exact_search(const VectorMatrix &matrix, std::span<const double> q,
                                          std::size_t k) {
  require(k >= 1, "exact_search: k must be >= 1");
  require(q.size() == matrix.dim, "exact_search: query dimension mismatch");
  std::vector<RetrievalResult> all;
  all.reserve(matrix.size());
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    all.push_back({i, matrix.ids[i], dot(q, matrix.row(i))});
  }
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<long>(keep), all.end(), ranks_before);
  all.resize(keep);
  return all;
}

// ---------------------------------------------------------------------------
// Scalar quantization

double SQ8Matrix::decode(std::size_t row, std::size_t j) const {
  const uint8_t code = codes[row * dim + j];
  if (code == 255) return maxs[j];
  return std::min(maxs[j], mins[j] + static_cast<double>(code) * steps[j]);
}

SQ8Matrix quantize(const VectorMatrix &matrix) {
  require(matrix.size() >= 1, "quantize: empty matrix");
  require(all_finite(matrix.data), "quantize: non-finite input");
  SQ8Matrix out;
  out.dim = matrix.dim;
  out.ids = matrix.ids;
  out.mins.assign(matrix.dim, 0.0);
  out.maxs.assign(matrix.dim, 0.0);
  out.steps.assign(matrix.dim, 0.0);
  for (std::size_t j = 0; j < matrix.dim; ++j) {
    double lo = matrix.row(0)[j], hi = lo;
    for (std::size_t i = 1; i < matrix.size(); ++i) {
      lo = std::min(lo, matrix.row(i)[j]);
      hi = std::max(hi, matrix.row(i)[j]);
    }
    out.mins[j] = lo;
    out.maxs[j] = hi;
    out.steps[j] = (hi - lo) / 255.0;
  }
  out.codes.resize(matrix.size() * matrix.dim);
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    for (std::size_t j = 0; j < matrix.dim; ++j) {
      uint8_t code = 0;
      if (out.steps[j] > 0.0) {
        const double c = std::round((matrix.row(i)[j] - out.mins[j]) / out.steps[j]);
        code = static_cast<uint8_t>(std::clamp(c, 0.0, 255.0));
      }
      out.codes[i * matrix.dim + j] = code;
    }
  }
  return out;
}

VectorMatrix dequantize(const SQ8Matrix &codes) {
  VectorMatrix out;
  out.dim = codes.dim;
  out.ids = codes.ids;
  out.data.resize(codes.size() * codes.dim);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    for (std::size_t j = 0; j < codes.dim; ++j) out.data[i * codes.dim + j] = codes.decode(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serving index

std::vector<RetrievalResult> merge_shard_results(
    std::vector<std::vector<RetrievalResult>> per_shard, std::size_t k) {
  std::vector<RetrievalResult> merged;
  for (auto &list : per_shard) {
    for (auto &r : list) merged.push_back(std::move(r));
  }
  sort_results(merged);
  if (merged.size() > k) merged.resize(k);
  return merged;
}

uint64_t DenseIndex::builds_so_far() { return g_index_builds.load(); }

DenseIndex::DenseIndex(const VectorMatrix &matrix, const DenseIndexConfig &config)
    : config_(config), dim_(matrix.dim) {
  require(matrix.size() > 0, "dense index over an empty matrix");
  require(config.shards >= 1, "dense index needs at least one shard");
  matrix.validate();
  const std::size_t shards = std::min(config.shards, matrix.size());
  config_.shards = shards;
  shards_.resize(shards);
  locations_.resize(matrix.size());
  for (auto &s : shards_) {
    s.vectors = std::make_shared<VectorMatrix>();
    s.vectors->dim = matrix.dim;
  }
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    Shard &s = shards_[i % shards];
    locations_[i] = {static_cast<uint32_t>(i % shards), s.global.size()};
    s.global.push_back(i);
    s.vectors->append(matrix.ids[i], matrix.row(i));
  }
  for (std::size_t si = 0; si < shards; ++si) {
    Shard &s = shards_[si];
    if (config.quantize) {
      s.codes = quantize(*s.vectors);
      *s.vectors = dequantize(*s.codes);
    }
    if (config.use_hnsw) {
      s.graph.emplace(s.vectors, HnswParams{config.M, config.ef_construction, config.seed + si});
    }
  }
  build_id_ = ++g_index_builds;
}

std::vector<RetrievalResult> DenseIndex::search(std::span<const double> q, std::size_t k) const {
  require(k >= 1, "dense search: k must be >= 1");
  require(q.size() == dim_, "dense search: query dimension mismatch");
  std::vector<std::vector<RetrievalResult>> per_shard;
  per_shard.reserve(shards_.size());
  for (const auto &s : shards_) {
    const std::size_t kk = std::min(k, s.vectors->size());
    auto local = s.graph ? s.graph->search(q, kk, std::max(config_.ef_search, kk))
                         : exact_search(*s.vectors, q, kk);
    for (auto &r : local) r.index = s.global[r.index];
    per_shard.push_back(std::move(local));
  }
  return merge_shard_results(std::move(per_shard), k);
}

std::span<const double> DenseIndex::vector(std::size_t global_index) const {
  const auto [shard, row] = locations_.at(global_index);
  return shards_[shard].vectors->row(row);
}

void DenseIndex::save(const std::string &path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(kIndexMagic, 8);
  binio::write_u32(out, kIndexVersion);
  binio::write_u64(out, size());
  binio::write_u32(out, static_cast<uint32_t>(dim_));
  binio::write_u32(out, static_cast<uint32_t>(config_.M));
  binio::write_u32(out, static_cast<uint32_t>(config_.ef_construction));
  binio::write_u32(out, static_cast<uint32_t>(config_.ef_search));
  binio::write_u32(out, kMetricInnerProduct);
  binio::write_u32(out, config_.quantize ? 1 : 0);
  binio::write_u32(out, config_.use_hnsw ? 1 : 0);
  binio::write_u32(out, static_cast<uint32_t>(shards_.size()));
  binio::write_u64(out, config_.seed);
  for (const auto &s : shards_) {
    binio::write_u64(out, s.global.size());
    for (std::size_t g : s.global) binio::write_u64(out, g);
    for (const auto &id : s.vectors->ids) binio::write_string(out, id);
    if (s.codes) {
      binio::write_f64s(out, s.codes->mins);
      binio::write_f64s(out, s.codes->maxs);
      binio::write_f64s(out, s.codes->steps);
      out.write(reinterpret_cast<const char *>(s.codes->codes.data()),
                static_cast<std::streamsize>(s.codes->codes.size()));
    } else {
      binio::write_f64s(out, s.vectors->data);
    }
    if (s.graph) s.graph->write_graph(out);
  }
}

DenseIndex DenseIndex::load(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("missing dense index " + path);
  binio::expect_magic(in, std::string_view(kIndexMagic, 8), path);
  require(binio::read_u32(in) == kIndexVersion, path + ": unsupported index version");
  DenseIndex index;
  const uint64_t n = binio::read_u64(in);
  index.dim_ = binio::read_u32(in);
  index.config_.M = binio::read_u32(in);
  index.config_.ef_construction = binio::read_u32(in);
  index.config_.ef_search = binio::read_u32(in);
  require(binio::read_u32(in) == kMetricInnerProduct, path + ": unsupported metric");
  index.config_.quantize = binio::read_u32(in) != 0;
  index.config_.use_hnsw = binio::read_u32(in) != 0;
  index.config_.shards = binio::read_u32(in);
  index.config_.seed = binio::read_u64(in);
  require(index.config_.shards >= 1 && index.config_.shards <= n, path + ": bad shard count");
  index.locations_.assign(n, {0, 0});
  index.shards_.resize(index.config_.shards);
  for (std::size_t si = 0; si < index.shards_.size(); ++si) {
    Shard &s = index.shards_[si];
    const uint64_t rows = binio::read_u64(in);
    require(rows <= n, path + ": bad shard size");
    s.global.resize(rows);
    for (auto &g : s.global) {
      g = binio::read_u64(in);
      require(g < n, path + ": bad global index");
    }
    s.vectors = std::make_shared<VectorMatrix>();
    s.vectors->dim = index.dim_;
    s.vectors->ids.resize(rows);
    for (auto &id : s.vectors->ids) id = binio::read_string(in);
    if (index.config_.quantize) {
      SQ8Matrix codes;
      codes.dim = index.dim_;
      codes.ids = s.vectors->ids;
      codes.mins.resize(index.dim_);
      codes.maxs.resize(index.dim_);
      codes.steps.resize(index.dim_);
      binio::read_f64s(in, codes.mins);
      binio::read_f64s(in, codes.maxs);
      binio::read_f64s(in, codes.steps);
      codes.codes.resize(rows * index.dim_);
      in.read(reinterpret_cast<char *>(codes.codes.data()),
              static_cast<std::streamsize>(codes.codes.size()));
      require(static_cast<bool>(in), path + ": truncated codes");
      *s.vectors = dequantize(codes);
      s.codes = std::move(codes);
    } else {
      s.vectors->data.resize(rows * index.dim_);
      binio::read_f64s(in, s.vectors->data);
    }
    if (index.config_.use_hnsw) {
      s.graph = HnswIndex::read_graph(
          in, s.vectors,
          HnswParams{index.config_.M, index.config_.ef_construction, index.config_.seed + si});
    }
    for (std::size_t r = 0; r < rows; ++r) {
      index.locations_[s.global[r]] = {static_cast<uint32_t>(si), r};
    }
  }
  index.build_id_ = ++g_index_builds;
  return index;
}

}  // namespace kgi
