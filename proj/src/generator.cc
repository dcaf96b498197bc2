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
#include <fstream>

#include "kgi/rag.h"

namespace kgi {

namespace {

constexpr char kGeneratorMagic[] = "KGIGEN01";
constexpr uint32_t kGeneratorVersion = 1;

// mean(G[BOS, prefix...])
std::vector<double> prefix_mean(const GeneratorParams &gen, std::span<const TokenId> prefix) {
  const std::size_t d = gen.dim();
  std::vector<double> m(gen.token_embedding.row(Vocab::kBos).begin(),
                        gen.token_embedding.row(Vocab::kBos).end());
  for (TokenId t : prefix) {
    require(t < gen.vocab_size(), "generator: prefix token out of range");
    auto row = gen.token_embedding.row(t);
    for (std::size_t c = 0; c < d; ++c) m[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(prefix.size() + 1);
  for (double &x : m) x *= inv;
  return m;
}

std::vector<double> hidden(const GeneratorParams &gen, const GeneratorContext &ctx,
                           const std::vector<double> &pmean) {
  auto h = matvec(gen.prefix_projection, pmean);
  for (std::size_t c = 0; c < h.size(); ++c) h[c] += ctx.context[c];
  return h;
}

}  // namespace

GeneratorParams GeneratorParams::zeros_like() const {
  GeneratorParams z;
  z.token_embedding = Matrix(token_embedding.rows, token_embedding.cols);
  z.context_projection = Matrix(context_projection.rows, context_projection.cols);
  z.prefix_projection = Matrix(prefix_projection.rows, prefix_projection.cols);
  z.output = Matrix(output.rows, output.cols);
  z.copy_bonus = 0.0;
  return z;
}

void GeneratorParams::set_zero() {
  token_embedding.fill(0.0);
  context_projection.fill(0.0);
  prefix_projection.fill(0.0);
  output.fill(0.0);
  copy_bonus = 0.0;
}

std::vector<ParamView> GeneratorParams::views(const GeneratorParams &grads) {
  return {{token_embedding.data, grads.token_embedding.data},
          {context_projection.data, grads.context_projection.data},
          {prefix_projection.data, grads.prefix_projection.data},
          {output.data, grads.output.data},
          {std::span<double>(&copy_bonus, 1), std::span<const double>(&grads.copy_bonus, 1)}};
}

GeneratorParams init_generator(std::size_t vocab_size, std::size_t dim, uint64_t seed) {
  require(dim >= 1, "generator dimension must be >= 1");
  require(vocab_size > Vocab::kEos, "generator vocabulary lacks reserved tokens");
  GeneratorParams g;
  Rng rng(seed);
  g.token_embedding = Matrix(vocab_size, dim);
  for (double &x : g.token_embedding.data) x = rng.uniform(-0.1, 0.1);
  g.output = Matrix(vocab_size, dim);
  for (double &x : g.output.data) x = rng.uniform(-0.1, 0.1);
  g.context_projection = Matrix::identity(dim);
  g.prefix_projection = Matrix::identity(dim);
  g.copy_bonus = 0.0;
  return g;
}

GeneratorContext prepare_context(const GeneratorParams &gen, std::span<const TokenId> input_seq) {
  require(!input_seq.empty(), "generator: empty input sequence");
  const std::size_t d = gen.dim();
  GeneratorContext ctx;
  ctx.input.assign(input_seq.begin(), input_seq.end());
  ctx.input_mean.assign(d, 0.0);
  for (TokenId t : input_seq) {
    require(t < gen.vocab_size(), "generator: input token out of range");
    auto row = gen.token_embedding.row(t);
    for (std::size_t c = 0; c < d; ++c) ctx.input_mean[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(input_seq.size());
  for (double &x : ctx.input_mean) x *= inv;
  ctx.context = matvec(gen.context_projection, ctx.input_mean);
  ctx.copyable = ctx.input;
  std::sort(ctx.copyable.begin(), ctx.copyable.end());
  ctx.copyable.erase(std::unique(ctx.copyable.begin(), ctx.copyable.end()), ctx.copyable.end());
  return ctx;
}

std::vector<double> generator_logits(const GeneratorParams &gen, const GeneratorContext &ctx,
                                     std::span<const TokenId> prefix) {
  auto h = hidden(gen, ctx, prefix_mean(gen, prefix));
  auto logits = matvec(gen.output, h);
  for (TokenId t : ctx.copyable) logits[t] += gen.copy_bonus;
  return logits;
}

std::vector<double> generator_logits(const GeneratorParams &gen,
                                     std::span<const TokenId> input_seq,
                                     std::span<const TokenId> prefix) {
  return generator_logits(gen, prepare_context(gen, input_seq), prefix);
}

void generator_backward(const GeneratorParams &gen, const GeneratorContext &ctx,
                        std::span<const TokenId> prefix, std::span<const double> dlogits,
                        GeneratorParams &grads) {
  const std::size_t d = gen.dim();
  const std::size_t vocab = gen.vocab_size();
  const auto pmean = prefix_mean(gen, prefix);
  const auto h = hidden(gen, ctx, pmean);

  for (TokenId t : ctx.copyable) grads.copy_bonus += dlogits[t];
  std::vector<double> dh(d, 0.0);
  for (std::size_t v = 0; v < vocab; ++v) {
    const double g = dlogits[v];
    if (g == 0.0) continue;
    auto urow = gen.output.row(v);
    auto grow = grads.output.row(v);
    for (std::size_t c = 0; c < d; ++c) {
      grow[c] += g * h[c];
      dh[c] += g * urow[c];
    }
  }
  for (std::size_t r = 0; r < d; ++r) {
    auto wc = grads.context_projection.row(r);
    auto wp = grads.prefix_projection.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      wc[c] += dh[r] * ctx.input_mean[c];
      wp[c] += dh[r] * pmean[c];
    }
  }
  auto d_input = matvec_transposed(gen.context_projection, dh);
  const double inv_in = 1.0 / static_cast<double>(ctx.input.size());
  for (TokenId t : ctx.input) {
    auto row = grads.token_embedding.row(t);
    for (std::size_t c = 0; c < d; ++c) row[c] += d_input[c] * inv_in;
  }
  auto d_prefix = matvec_transposed(gen.prefix_projection, dh);
  const double inv_pre = 1.0 / static_cast<double>(prefix.size() + 1);
  auto add_prefix = [&](TokenId t) {
    auto row = grads.token_embedding.row(t);
    for (std::size_t c = 0; c < d; ++c) row[c] += d_prefix[c] * inv_pre;
  };
  add_prefix(Vocab::kBos);
  for (TokenId t : prefix) add_prefix(t);
}

void save_generator(const std::string &path, const GeneratorParams &gen,
                    const std::string &vocab_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(kGeneratorMagic, 8);
  binio::write_u32(out, kGeneratorVersion);
  binio::write_string(out, vocab_hash);
  binio::write_u64(out, gen.vocab_size());
  binio::write_u64(out, gen.dim());
  binio::write_f64s(out, gen.token_embedding.data);
  binio::write_f64s(out, gen.context_projection.data);
  binio::write_f64s(out, gen.prefix_projection.data);
  binio::write_f64s(out, gen.output.data);
  binio::write_f64(out, gen.copy_bonus);
}

GeneratorParams load_generator(const std::string &path, const std::string &expected_vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("missing generator checkpoint " + path);
  binio::expect_magic(in, std::string_view(kGeneratorMagic, 8), path);
  require(binio::read_u32(in) == kGeneratorVersion, path + ": unsupported checkpoint version");
  if (binio::read_string(in) != expected_vocab_hash) {
    throw StageError(path + ": checkpoint was trained against a different vocabulary");
  }
  const uint64_t vocab = binio::read_u64(in);
  const uint64_t dim = binio::read_u64(in);
  GeneratorParams g;
  g.token_embedding = Matrix(vocab, dim);
  g.context_projection = Matrix(dim, dim);
  g.prefix_projection = Matrix(dim, dim);
  g.output = Matrix(vocab, dim);
  binio::read_f64s(in, g.token_embedding.data);
  binio::read_f64s(in, g.context_projection.data);
  binio::read_f64s(in, g.prefix_projection.data);
  binio::read_f64s(in, g.output.data);
  g.copy_bonus = binio::read_f64(in);
  return g;
}

}  // namespace kgi
