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

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>

#include "kgi/common.h"
#include "kgi/dense_index.h"

namespace kgi {

// Generation-stamped visited set; clear() is O(1).
class HnswIndex::Visited {
 public:
  explicit Visited(std::size_t n) : marks_(n, 0) {}
  void clear() {
    if (++stamp_ == 0) {
      std::fill(marks_.begin(), marks_.end(), 0);
      stamp_ = 1;
    }
  }
  bool test_and_set(uint32_t node) {
    if (marks_[node] == stamp_) return true;
    marks_[node] = stamp_;
    return false;
  }

 private:
  std::vector<uint32_t> marks_;
  uint32_t stamp_ = 0;
};

HnswIndex::HnswIndex(std::shared_ptr<const VectorMatrix> vectors, HnswParams params, bool)
    : vectors_(std::move(vectors)), params_(params) {
  require(vectors_ && vectors_->size() > 0, "HNSW over an empty matrix");
  require(params_.M >= 2, "HNSW M must be >= 2");
  require(params_.ef_construction >= params_.M, "HNSW ef_construction must be >= M");
  const std::size_t n = vectors_->size();
  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](uint32_t a, uint32_t b) { return vectors_->ids[a] < vectors_->ids[b]; });
  id_rank_.resize(n);
  for (uint32_t r = 0; r < n; ++r) id_rank_[order[r]] = r;
}

HnswIndex::HnswIndex(std::shared_ptr<const VectorMatrix> vectors, HnswParams params)
    : HnswIndex(std::move(vectors), params, true) {
  const std::size_t n = vectors_->size();
  Rng rng(params_.seed);
  const double level_mult = 1.0 / std::log(static_cast<double>(params_.M));
  levels_.resize(n);
  links_.resize(n);
  Visited visited(n);
  for (uint32_t node = 0; node < n; ++node) {
    const double u = 1.0 - rng.uniform();  // (0, 1]
    const int level = static_cast<int>(std::floor(-std::log(u) * level_mult));
    levels_[node] = level;
    links_[node].resize(static_cast<std::size_t>(level) + 1);
    insert(node, level, visited);
  }
  repair_connectivity();
}

double HnswIndex::similarity(uint32_t a, uint32_t b) const {
  return dot(vectors_->row(a), vectors_->row(b));
}

double HnswIndex::similarity(std::span<const double> q, uint32_t node) const {
  return dot(q, vectors_->row(node));
}

bool HnswIndex::better(const Candidate &a, const Candidate &b) const {
  if (a.score != b.score) return a.score > b.score;
  return id_rank_[a.node] < id_rank_[b.node];
}

std::vector<HnswIndex::Candidate> HnswIndex::search_layer(std::span<const double> q,
                                                          const std::vector<Candidate> &entry,
                                                          std::size_t ef, int layer,
                                                          Visited &visited) const {
  auto best_first = [this](const Candidate &a, const Candidate &b) { return better(b, a); };
  auto worst_first = [this](const Candidate &a, const Candidate &b) { return better(a, b); };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(best_first)> frontier(
      best_first);
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(worst_first)> found(
      worst_first);
  visited.clear();
  for (const auto &c : entry) {
    if (visited.test_and_set(c.node)) continue;
    frontier.push(c);
    found.push(c);
    if (found.size() > ef) found.pop();
  }
  while (!frontier.empty()) {
    const Candidate cur = frontier.top();
    if (found.size() >= ef && better(found.top(), cur)) break;
    frontier.pop();
    for (uint32_t next : links_[cur.node][static_cast<std::size_t>(layer)]) {
      if (visited.test_and_set(next)) continue;
      const Candidate cand{similarity(q, next), next};
      if (found.size() < ef || better(cand, found.top())) {
        frontier.push(cand);
        found.push(cand);
        if (found.size() > ef) found.pop();
      }
    }
  }
  std::vector<Candidate> out;
  out.reserve(found.size());
  while (!found.empty()) {
    out.push_back(found.top());
    found.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Keeps a candidate only if it is closer to the base than to every neighbor
// already kept.
std::vector<uint32_t> HnswIndex::select_neighbors(uint32_t base, std::vector<Candidate> candidates,
                                                  std::size_t max_count) const {
  std::sort(candidates.begin(), candidates.end(),
            [this](const Candidate &a, const Candidate &b) { return better(a, b); });
  std::vector<uint32_t> kept;
  if (candidates.size() <= max_count) {
    for (const auto &c : candidates) kept.push_back(c.node);
    return kept;
  }
  for (const auto &c : candidates) {
    if (kept.size() >= max_count) break;
    if (c.node == base) continue;
    bool diverse = true;
    for (uint32_t k : kept) {
      if (similarity(c.node, k) > c.score) {
        diverse = false;
        break;
      }
    }
    if (diverse) kept.push_back(c.node);
  }
  return kept;
}

void HnswIndex::insert(uint32_t node, int level, Visited &visited) {
  if (max_level_ < 0) {
    entry_ = node;
    max_level_ = level;
    return;
  }
  auto q = vectors_->row(node);
  Candidate cur{similarity(q, entry_), entry_};
  for (int layer = max_level_; layer > level; --layer) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (uint32_t next : links_[cur.node][static_cast<std::size_t>(layer)]) {
        const Candidate cand{similarity(q, next), next};
        if (better(cand, cur)) {
          cur = cand;
          moved = true;
        }
      }
    }
  }
  std::vector<Candidate> entry{cur};
  for (int layer = std::min(level, max_level_); layer >= 0; --layer) {
    auto found = search_layer(q, entry, params_.ef_construction, layer, visited);
    // New nodes link up to the layer's degree cap: 2M on layer 0, M above.
    auto chosen = select_neighbors(node, found, max_degree(layer));
    const auto lyr = static_cast<std::size_t>(layer);
    links_[node][lyr] = chosen;
    for (uint32_t nb : chosen) {
      auto &back = links_[nb][lyr];
      back.push_back(node);
      if (back.size() > max_degree(layer)) {
        std::vector<Candidate> cands;
        cands.reserve(back.size());
        for (uint32_t x : back) cands.push_back({similarity(nb, x), x});
        back = select_neighbors(nb, std::move(cands), max_degree(layer));
      }
    }
    entry = std::move(found);
  }
  if (level > max_level_) {
    entry_ = node;
    max_level_ = level;
  }
}

void HnswIndex::repair_connectivity() {
  const std::size_t n = levels_.size();
  std::vector<char> reached(n, 0);
  auto flood = [&](uint32_t start) {
    std::vector<uint32_t> stack{start};
    reached[start] = 1;
    while (!stack.empty()) {
      uint32_t u = stack.back();
      stack.pop_back();
      for (uint32_t v : links_[u][0]) {
        if (!reached[v]) {
          reached[v] = 1;
          stack.push_back(v);
        }
      }
    }
  };
  flood(entry_);
  for (uint32_t u = 0; u < n; ++u) {
    if (reached[u]) continue;
    std::optional<Candidate> host;
    for (uint32_t v = 0; v < n; ++v) {
      if (!reached[v] || links_[v][0].size() >= max_degree(0)) continue;
      const Candidate c{similarity(u, v), v};
      if (!host || better(c, *host)) host = c;
    }
    if (!host) {
      // All reached nodes are full. Put u in place of the best host's last
      // link and hand that neighbor to u.
      for (uint32_t v = 0; v < n; ++v) {
        if (!reached[v]) continue;
        const Candidate c{similarity(u, v), v};
        if (!host || better(c, *host)) host = c;
      }
      if (!host) throw std::logic_error("HNSW repair: nothing is reachable from the entry");
      auto &out = links_[host->node][0];
      const uint32_t dropped = out.back();
      out.back() = u;
      auto &mine = links_[u][0];
      if (std::find(mine.begin(), mine.end(), dropped) == mine.end()) {
        if (mine.size() >= max_degree(0)) mine.pop_back();
        mine.push_back(dropped);
      }
      ++repaired_;
      flood(u);
      continue;
    }
    links_[host->node][0].push_back(u);
    ++repaired_;
    flood(u);
  }
}

std::vector<RetrievalResult> HnswIndex::search(std::span<const double> q, std::size_t k,
                                               std::size_t ef_search) const {
  require(k >= 1, "hnsw_search: k must be >= 1");
  require(ef_search >= k, "hnsw_search: ef_search must be >= k");
  require(q.size() == vectors_->dim, "hnsw_search: query dimension mismatch");
  Visited visited(levels_.size());
  Candidate cur{similarity(q, entry_), entry_};
  for (int layer = max_level_; layer > 0; --layer) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (uint32_t next : links_[cur.node][static_cast<std::size_t>(layer)]) {
        const Candidate cand{similarity(q, next), next};
        if (better(cand, cur)) {
          cur = cand;
          moved = true;
        }
      }
    }
  }
  // Repair only guarantees reachability from the entry point.
  std::vector<Candidate> seeds{cur};
  if (cur.node != entry_) seeds.push_back({similarity(q, entry_), entry_});
  auto found = search_layer(q, seeds, ef_search, 0, visited);
  std::vector<RetrievalResult> out;
  for (std::size_t i = 0; i < found.size() && i < k; ++i) {
    out.push_back({found[i].node, vectors_->ids[found[i].node], found[i].score});
  }
  return out;
}

void HnswIndex::check_invariants() const {
  const std::size_t n = levels_.size();
  if (n == 0) return;
  if (levels_[entry_] != max_level_) throw std::logic_error("HNSW entry point not on top layer");
  for (uint32_t u = 0; u < n; ++u) {
    if (links_[u].size() != static_cast<std::size_t>(levels_[u]) + 1) {
      throw std::logic_error("HNSW node layer count mismatch");
    }
    for (int layer = 0; layer <= levels_[u]; ++layer) {
      const auto &nbrs = links_[u][static_cast<std::size_t>(layer)];
      if (nbrs.size() > max_degree(layer)) throw std::logic_error("HNSW degree bound exceeded");
      for (uint32_t v : nbrs) {
        if (v >= n || v == u || levels_[v] < layer) {
          throw std::logic_error("HNSW edge references an invalid node");
        }
      }
    }
  }
}

void HnswIndex::write_graph(std::ostream &out) const {
  binio::write_u32(out, entry_);
  binio::write_u32(out, static_cast<uint32_t>(max_level_));
  binio::write_u64(out, repaired_);
  for (std::size_t u = 0; u < levels_.size(); ++u) {
    binio::write_u32(out, static_cast<uint32_t>(levels_[u]));
    for (const auto &nbrs : links_[u]) {
      binio::write_u32(out, static_cast<uint32_t>(nbrs.size()));
      for (uint32_t v : nbrs) binio::write_u32(out, v);
    }
  }
}

HnswIndex HnswIndex::read_graph(std::istream &in, std::shared_ptr<const VectorMatrix> vectors,
                                HnswParams params) {
  HnswIndex index(std::move(vectors), params, true);
  const std::size_t n = index.vectors_->size();
  index.entry_ = binio::read_u32(in);
  index.max_level_ = static_cast<int>(binio::read_u32(in));
  index.repaired_ = binio::read_u64(in);
  index.levels_.resize(n);
  index.links_.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    const uint32_t level = binio::read_u32(in);
    require(level < 64, "corrupt HNSW graph level");
    index.levels_[u] = static_cast<int>(level);
    index.links_[u].resize(level + 1);
    for (auto &nbrs : index.links_[u]) {
      const uint32_t count = binio::read_u32(in);
      require(count <= 2 * params.M, "corrupt HNSW neighbor list");
      nbrs.resize(count);
      for (auto &v : nbrs) v = binio::read_u32(in);
    }
  }
  require(index.entry_ < n, "corrupt HNSW entry point");
  index.check_invariants();
  return index;
}

HnswIndex build_hnsw(std::shared_ptr<const VectorMatrix> matrix, std::size_t M,
                     std::size_t ef_construction, uint64_t seed) {
  return HnswIndex(std::move(matrix), {M, ef_construction, seed});
}

std::vector<RetrievalResult> hnsw_search(const HnswIndex &index, std::span<const double> q,
                                         std::size_t k, std::size_t ef_search) {
  return index.search(q, k, ef_search);
}

}  // namespace kgi
