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

#ifndef KGI_COMMON_H_
#define KGI_COMMON_H_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kgi {

// Bad input or a violated precondition. Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage is missing an input or its manifest is stale. Exit code 3.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string &message) {
  if (!condition) throw ValidationError(message);
}

// Seeded generator with platform-independent derived distributions
// (std:: distributions are implementation defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform in [0, n).
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  double normal();

  template <typename T>
  void shuffle(std::vector<T> &items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);

  double &at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  void fill(double v);
  bool operator==(const Matrix &other) const = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

// y = M x
std::vector<double> matvec(const Matrix &m, std::span<const double> x);
// y = M^T x
std::vector<double> matvec_transposed(const Matrix &m, std::span<const double> x);

double log_sum_exp(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string &path);

std::string read_file(const std::string &path);
void write_file(const std::string &path, std::string_view contents);

// Little-endian binary helpers for checkpoint and index files.
namespace binio {
void write_u32(std::ostream &out, uint32_t v);
void write_u64(std::ostream &out, uint64_t v);
void write_f64(std::ostream &out, double v);
void write_string(std::ostream &out, std::string_view s);
void write_f64s(std::ostream &out, std::span<const double> v);
uint32_t read_u32(std::istream &in);
uint64_t read_u64(std::istream &in);
double read_f64(std::istream &in);
std::string read_string(std::istream &in);
void read_f64s(std::istream &in, std::span<double> v);
void expect_magic(std::istream &in, std::string_view magic, const std::string &what);
}  // namespace binio

}  // namespace kgi

#endif  // KGI_COMMON_H_
