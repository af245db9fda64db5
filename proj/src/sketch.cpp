// Copyright 2026 The FedSketch Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedsketch/sketch.hpp"

#include <algorithm>
#include <string>

#include "fedsketch/errors.hpp"
#include "fedsketch/seeding.hpp"

namespace fedsketch {

namespace {

constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

std::size_t checked_size(std::int64_t v, const char* name) {
  if (v < 1) {
    throw ParameterError(std::string(name) + " must be >= 1, got " + std::to_string(v));
  }
  return static_cast<std::size_t>(v);
}

void require_same_shape(const SketchTable& a, const SketchTable& b) {
  if (a.fingerprint() != b.fingerprint() || a.rows() != b.rows() ||
      a.buckets() != b.buckets()) {
    throw IncompatibleSketchError("sketch tables come from different hash families");
  }
}

void require_family(const SketchTable& s, const HashFamily& f) {
  if (s.fingerprint() != f.fingerprint() || s.rows() != f.rows() ||
      s.buckets() != f.buckets()) {
    throw IncompatibleSketchError("sketch table does not match the hash family");
  }
}

}  // namespace

std::uint64_t family_fingerprint(std::uint64_t master_seed, std::uint64_t round_tag,
                                 std::uint64_t rows, std::uint64_t buckets,
                                 std::uint64_t dim) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint64_t w : {master_seed, round_tag, rows, buckets, dim}) {
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (w >> (8 * byte)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

HashFamily::HashFamily(std::uint64_t master_seed, std::uint64_t round_tag,
                       std::int64_t rows, std::int64_t buckets, std::int64_t dim)
    : master_seed_(master_seed),
      round_tag_(round_tag),
      rows_(checked_size(rows, "t")),
      buckets_(checked_size(buckets, "m")),
      dim_(checked_size(dim, "d")),
      fingerprint_(family_fingerprint(master_seed, round_tag, rows_, buckets_, dim_)) {
  row_keys_.reserve(rows_);
  for (std::size_t j = 0; j < rows_; ++j) {
    row_keys_.push_back(derive_seed(master_seed_, {round_tag_, j}));
  }
}

std::uint64_t HashFamily::word(std::size_t row, std::size_t coord) const {
  // Element `coord` of the SplitMix64 stream started at the row key.
  return mix64(row_keys_[row] + coord * kGoldenGamma);
}

void HashFamily::check(std::int64_t row, std::int64_t coord) const {
  if (row < 0 || static_cast<std::size_t>(row) >= rows_) {
    throw IndexError("hash row " + std::to_string(row) + " outside [0, " +
                     std::to_string(rows_) + ")");
  }
  if (coord < 0 || static_cast<std::size_t>(coord) >= dim_) {
    throw IndexError("coordinate " + std::to_string(coord) + " outside [0, " +
                     std::to_string(dim_) + ")");
  }
}

std::size_t HashFamily::index(std::int64_t row, std::int64_t coord) const {
  check(row, coord);
  return index_unchecked(static_cast<std::size_t>(row), static_cast<std::size_t>(coord));
}

int HashFamily::sign(std::int64_t row, std::int64_t coord) const {
  check(row, coord);
  return sign_unchecked(static_cast<std::size_t>(row), static_cast<std::size_t>(coord));
}

HashFamily derive_family(std::uint64_t master_seed, std::uint64_t round,
                         std::int64_t rows, std::int64_t buckets, std::int64_t dim) {
  return HashFamily(master_seed, round, rows, buckets, dim);
}

std::size_t hash_index(const HashFamily& f, std::int64_t row, std::int64_t coord) {
  return f.index(row, coord);
}

int hash_sign(const HashFamily& f, std::int64_t row, std::int64_t coord) {
  return f.sign(row, coord);
}

SketchTable::SketchTable(const HashFamily& f)
    : rows_(f.rows()),
      buckets_(f.buckets()),
      fingerprint_(f.fingerprint()),
      values_(f.rows() * f.buckets(), 0.0) {}

SketchTable::SketchTable(std::size_t rows, std::size_t buckets,
                         std::uint64_t fingerprint, std::vector<double> values)
    : rows_(rows), buckets_(buckets), fingerprint_(fingerprint), values_(std::move(values)) {
  if (rows_ == 0 || buckets_ == 0 || values_.size() != rows_ * buckets_) {
    throw DimensionError("sketch table needs rows*buckets values");
  }
}

bool SketchTable::is_zero() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

SketchTable compress(const Vector& x, const HashFamily& f) {
  if (static_cast<std::size_t>(x.size()) != f.dim()) {
    throw DimensionError("compress: vector has length " + std::to_string(x.size()) +
                         ", family expects " + std::to_string(f.dim()));
  }
  const std::size_t rows = f.rows();
  const std::size_t buckets = f.buckets();
  std::vector<double> values(rows * buckets, 0.0);
  for (std::size_t i = 0; i < f.dim(); ++i) {
    const double xi = x[static_cast<Eigen::Index>(i)];
    for (std::size_t j = 0; j < rows; ++j) {
      values[j * buckets + f.index_unchecked(j, i)] += f.sign_unchecked(j, i) * xi;
    }
  }
  return SketchTable(rows, buckets, f.fingerprint(), std::move(values));
}

SketchTable table_add(const SketchTable& a, const SketchTable& b) {
  require_same_shape(a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return SketchTable(a.rows(), a.buckets(), a.fingerprint(), std::move(out));
}

SketchTable table_sub(const SketchTable& a, const SketchTable& b) {
  require_same_shape(a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return SketchTable(a.rows(), a.buckets(), a.fingerprint(), std::move(out));
}

SketchTable table_scale(const SketchTable& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= c;
  return SketchTable(a.rows(), a.buckets(), a.fingerprint(), std::move(out));
}

double median_inplace(std::span<double> values) {
  if (values.empty()) throw ParameterError("median of an empty sample");
  const std::size_t n = values.size();
  const std::size_t mid = n / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

std::vector<double> row_estimates(const SketchTable& s, const HashFamily& f,
                                  std::int64_t coord) {
  require_family(s, f);
  std::vector<double> est(f.rows());
  for (std::size_t j = 0; j < f.rows(); ++j) {
    const auto row = static_cast<std::int64_t>(j);
    est[j] = f.sign(row, coord) * s.at(j, f.index(row, coord));
  }
  return est;
}

double point_query(const SketchTable& s, const HashFamily& f, std::int64_t coord) {
  auto est = row_estimates(s, f, coord);
  return median_inplace(est);
}

Vector query_all(const SketchTable& s, const HashFamily& f) {
  require_family(s, f);
  Vector out(static_cast<Eigen::Index>(f.dim()));
  std::vector<double> est(f.rows());
  for (std::size_t i = 0; i < f.dim(); ++i) {
    for (std::size_t j = 0; j < f.rows(); ++j) {
      est[j] = f.sign_unchecked(j, i) * s.at(j, f.index_unchecked(j, i));
    }
    out[static_cast<Eigen::Index>(i)] = median_inplace(est);
  }
  return out;
}

double l2_estimate(const SketchTable& s) {
  std::vector<double> norms(s.rows(), 0.0);
  for (std::size_t j = 0; j < s.rows(); ++j) {
    for (double v : s.row(j)) norms[j] += v * v;
  }
  return median_inplace(norms);
}

}  // namespace fedsketch
