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

#include "kgi/biencoder.h"

#include <cmath>
#include <fstream>

namespace kgi {

namespace {

constexpr char kEncoderMagic[] = "KGIENC01";
constexpr uint32_t kEncoderVersion = 1;

std::vector<double> mean_rows(const Matrix &table, std::span<const TokenId> tokens) {
  std::vector<double> m(table.cols, 0.0);
  for (TokenId t : tokens) {
    auto row = table.row(t);
    for (std::size_t c = 0; c < m.size(); ++c) m[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (double &x : m) x *= inv;
  return m;
}

}  // namespace

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z;
  z.embedding = Matrix(embedding.rows, embedding.cols);
  z.projection = Matrix(projection.rows, projection.cols);
  z.bias.assign(bias.size(), 0.0);
  return z;
}

void EncoderParams::set_zero() {
  embedding.fill(0.0);
  projection.fill(0.0);
  std::fill(bias.begin(), bias.end(), 0.0);
}

std::vector<ParamView> EncoderParams::views(const EncoderParams &grads) {
  return {{embedding.data, grads.embedding.data},
          {projection.data, grads.projection.data},
          {bias, grads.bias}};
}

EncoderParams init_encoder(std::size_t vocab_size, std::size_t dim, uint64_t seed) {
  require(dim >= 1, "encoder dimension must be >= 1");
  EncoderParams p;
  p.embedding = Matrix(vocab_size, dim);
  Rng rng(seed);
  for (double &x : p.embedding.data) x = rng.uniform(-0.1, 0.1);
  p.projection = Matrix::identity(dim);
  p.bias.assign(dim, 0.0);
  return p;
}

EncoderPair init_encoder_pair(std::size_t vocab_size, std::size_t dim, uint64_t seed) {
  EncoderParams e = init_encoder(vocab_size, dim, seed);
  return {e, e};
}

std::vector<double> encode(const EncoderParams &params, std::span<const TokenId> tokens) {
  require(!tokens.empty(), "encode: empty token sequence");
  for (TokenId t : tokens) require(t < params.vocab_size(), "encode: token id out of range");
  auto m = mean_rows(params.embedding, tokens);
  auto v = matvec(params.projection, m);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += params.bias[i];
  return v;
}

void encode_backward(const EncoderParams &params, std::span<const TokenId> tokens,
                     std::span<const double> dv, EncoderParams &grads) {
  const std::size_t d = params.dim();
  auto m = mean_rows(params.embedding, tokens);
  for (std::size_t r = 0; r < d; ++r) {
    grads.bias[r] += dv[r];
    auto grow = grads.projection.row(r);
    for (std::size_t c = 0; c < d; ++c) grow[c] += dv[r] * m[c];
  }
  auto dm = matvec_transposed(params.projection, dv);
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (TokenId t : tokens) {
    auto grow = grads.embedding.row(t);
    for (std::size_t c = 0; c < d; ++c) grow[c] += dm[c] * inv;
  }
}

DprLossResult dpr_loss(const Matrix &queries, const Matrix &positives, const Matrix &negatives) {
  const std::size_t batch = queries.rows;
  const std::size_t d = queries.cols;
  require(batch >= 1, "dpr_loss: empty batch");
  require(positives.rows == batch && negatives.rows == batch && positives.cols == d &&
              negatives.cols == d,
          "dpr_loss: inconsistent shapes");
  require(all_finite(queries.data) && all_finite(positives.data) && all_finite(negatives.data),
          "dpr_loss: non-finite input");

  auto candidate = [&](std::size_t j) {
    return j < batch ? positives.row(j) : negatives.row(j - batch);
  };
  DprLossResult out;
  out.d_query = Matrix(batch, d);
  out.d_positive = Matrix(batch, d);
  out.d_negative = Matrix(batch, d);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  std::vector<double> scores(2 * batch);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < 2 * batch; ++j) scores[j] = dot(queries.row(i), candidate(j));
    auto logp = log_softmax(scores);
    out.loss -= logp[i] * inv_batch;
    for (std::size_t j = 0; j < 2 * batch; ++j) {
      const double g = (std::exp(logp[j]) - (j == i ? 1.0 : 0.0)) * inv_batch;
      if (g == 0.0) continue;
      auto c = candidate(j);
      auto dq = out.d_query.row(i);
      auto dc = j < batch ? out.d_positive.row(j) : out.d_negative.row(j - batch);
      auto q = queries.row(i);
      for (std::size_t k = 0; k < d; ++k) {
        dq[k] += g * c[k];
        dc[k] += g * q[k];
      }
    }
  }
  return out;
}

std::vector<DprExample> make_dpr_examples(const std::vector<DprTriple> &triples,
                                          const std::vector<Passage> &passages,
                                          const std::vector<SlotInstance> &instances,
                                          const Vocab &vocab) {
  std::vector<DprExample> out;
  out.reserve(triples.size());
  for (const auto &t : triples) {
    const auto &inst = instances.at(t.instance);
    out.push_back({tokenize(vocab, render_query(inst.subject, inst.relation)),
                   tokenize(vocab, passage_encoder_text(passages.at(t.positive))),
                   tokenize(vocab, passage_encoder_text(passages.at(t.hard_negative)))});
  }
  return out;
}

double dpr_batch_loss(const EncoderPair &encoders, std::span<const DprExample> batch,
                      EncoderPair *grads) {
  const std::size_t d = encoders.query_encoder.dim();
  Matrix q(batch.size(), d), pos(batch.size(), d), neg(batch.size(), d);
  auto put = [](Matrix &m, std::size_t r, const std::vector<double> &v) {
    std::copy(v.begin(), v.end(), m.row(r).begin());
  };
  for (std::size_t i = 0; i < batch.size(); ++i) {
    put(q, i, encode(encoders.query_encoder, batch[i].query));
    put(pos, i, encode(encoders.context_encoder, batch[i].positive));
    put(neg, i, encode(encoders.context_encoder, batch[i].negative));
  }
  auto result = dpr_loss(q, pos, neg);
  if (grads != nullptr) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      encode_backward(encoders.query_encoder, batch[i].query, result.d_query.row(i),
                      grads->query_encoder);
      encode_backward(encoders.context_encoder, batch[i].positive, result.d_positive.row(i),
                      grads->context_encoder);
      encode_backward(encoders.context_encoder, batch[i].negative, result.d_negative.row(i),
                      grads->context_encoder);
    }
  }
  return result.loss;
}

DprTrainResult train_dpr(const std::vector<DprExample> &examples, const EncoderPair &encoders,
                         const TrainConfig &config) {
  require(!examples.empty(), "train_dpr: no training triples");
  config.validate();
  DprTrainResult out{encoders, {}};
  EncoderPair grads{encoders.query_encoder.zeros_like(), encoders.context_encoder.zeros_like()};
  std::vector<ParamView> views = out.encoders.query_encoder.views(grads.query_encoder);
  for (auto &v : out.encoders.context_encoder.views(grads.context_encoder)) views.push_back(v);

  OptimizerState state;
  Rng rng(config.seed);
  const std::size_t n = examples.size();
  const long steps_per_epoch = static_cast<long>((n + config.batch_size - 1) / config.batch_size);
  const long total_steps = steps_per_epoch * config.epochs;
  std::vector<std::size_t> order(n);
  std::vector<DprExample> batch;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
      grads.query_encoder.set_zero();
      grads.context_encoder.set_zero();
      const double loss = dpr_batch_loss(out.encoders, batch, &grads);
      epoch_loss += loss * static_cast<double>(end - start);
      optimizer_step(views, state, lr_at(step, total_steps, config), config);
      ++step;
    }
    out.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
  }
  return out;
}

void save_encoder(const std::string &path, const EncoderParams &params,
                  const std::string &vocab_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(kEncoderMagic, 8);
  binio::write_u32(out, kEncoderVersion);
  binio::write_string(out, vocab_hash);
  binio::write_u64(out, params.vocab_size());
  binio::write_u64(out, params.dim());
  binio::write_f64s(out, params.embedding.data);
  binio::write_f64s(out, params.projection.data);
  binio::write_f64s(out, params.bias);
}

EncoderParams load_encoder(const std::string &path, const std::string &expected_vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("missing encoder checkpoint " + path);
  binio::expect_magic(in, std::string_view(kEncoderMagic, 8), path);
  const uint32_t version = binio::read_u32(in);
  require(version == kEncoderVersion, path + ": unsupported checkpoint version");
  const std::string hash = binio::read_string(in);
  if (hash != expected_vocab_hash) {
    throw StageError(path + ": checkpoint was trained against a different vocabulary");
  }
  const uint64_t vocab = binio::read_u64(in);
  const uint64_t dim = binio::read_u64(in);
  EncoderParams p;
  p.embedding = Matrix(vocab, dim);
  p.projection = Matrix(dim, dim);
  p.bias.assign(dim, 0.0);
  binio::read_f64s(in, p.embedding.data);
  binio::read_f64s(in, p.projection.data);
  binio::read_f64s(in, p.bias);
  return p;
}

}  // namespace kgi
