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

#ifndef FEDSKETCH_SKETCH_HPP_
#define FEDSKETCH_SKETCH_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fedsketch {

using Vector = Eigen::VectorXd;

// Seeded family of `rows` index hashes [0, dim) -> [0, buckets) and `rows`
// sign hashes [0, dim) -> {+1, -1}.
//
// Each (row, coord) pair maps to one SplitMix64 word of a stream keyed by
// (master_seed, round_tag, row). Bits 1..63 reduced modulo `buckets` give the
// bucket; bit 0 gives the sign, so bucket and sign stay independent even when
// `buckets` is even. Two families with equal fields hash identically, which
// is what lets per-device sketches be added.
class HashFamily {
 public:
  HashFamily(std::uint64_t master_seed, std::uint64_t round_tag,
             std::int64_t rows, std::int64_t buckets, std::int64_t dim);

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t round_tag() const { return round_tag_; }
  std::size_t rows() const { return rows_; }
  std::size_t buckets() const { return buckets_; }
  std::size_t dim() const { return dim_; }

  // FNV-1a over the little-endian words (master_seed, round_tag, t, m, d).
  std::uint64_t fingerprint() const { return fingerprint_; }

  // Bounds-checked; throw IndexError.
  std::size_t index(std::int64_t row, std::int64_t coord) const;
  int sign(std::int64_t row, std::int64_t coord) const;

  // Unchecked variants for inner loops.
  std::size_t index_unchecked(std::size_t row, std::size_t coord) const {
    return static_cast<std::size_t>((word(row, coord) >> 1) % buckets_);
  }
  int sign_unchecked(std::size_t row, std::size_t coord) const {
    return (word(row, coord) & 1U) != 0 ? 1 : -1;
  }

  friend bool operator==(const HashFamily& a, const HashFamily& b) {
    return a.master_seed_ == b.master_seed_ && a.round_tag_ == b.round_tag_ &&
           a.rows_ == b.rows_ && a.buckets_ == b.buckets_ && a.dim_ == b.dim_;
  }

 private:
  std::uint64_t word(std::size_t row, std::size_t coord) const;
  void check(std::int64_t row, std::int64_t coord) const;

  std::uint64_t master_seed_;
  std::uint64_t round_tag_;
  std::size_t rows_;
  std::size_t buckets_;
  std::size_t dim_;
  std::uint64_t fingerprint_;
  std::vector<std::uint64_t> row_keys_;
};

std::uint64_t family_fingerprint(std::uint64_t master_seed, std::uint64_t round_tag,
                                 std::uint64_t rows, std::uint64_t buckets,
                                 std::uint64_t dim);

// Fresh family for a protocol round: round_tag = round.
HashFamily derive_family(std::uint64_t master_seed, std::uint64_t round,
                         std::int64_t rows, std::int64_t buckets, std::int64_t dim);

std::size_t hash_index(const HashFamily& f, std::int64_t row, std::int64_t coord);
int hash_sign(const HashFamily& f, std::int64_t row, std::int64_t coord);

// Dense rows x buckets count-sketch table, row-major. Values never change
// after construction; arithmetic returns new tables.
class SketchTable {
 public:
  // All-zero table tagged for `f`.
  explicit SketchTable(const HashFamily& f);
  SketchTable(std::size_t rows, std::size_t buckets, std::uint64_t fingerprint,
              std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t buckets() const { return buckets_; }
  std::uint64_t fingerprint() const { return fingerprint_; }

  double at(std::size_t row, std::size_t bucket) const {
    return values_[row * buckets_ + bucket];
  }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * buckets_, buckets_};
  }
  std::span<const double> values() const { return values_; }

  bool is_zero() const;

  friend bool operator==(const SketchTable&, const SketchTable&) = default;

 private:
  std::size_t rows_;
  std::size_t buckets_;
  std::uint64_t fingerprint_;
  std::vector<double> values_;
};

// values[j][b] = sum over i ascending with h_j(i) = b of sign_j(i) * x_i.
SketchTable compress(const Vector& x, const HashFamily& f);

SketchTable table_add(const SketchTable& a, const SketchTable& b);
SketchTable table_sub(const SketchTable& a, const SketchTable& b);
SketchTable table_scale(const SketchTable& a, double c);

inline SketchTable operator+(const SketchTable& a, const SketchTable& b) {
  return table_add(a, b);
}
inline SketchTable operator-(const SketchTable& a, const SketchTable& b) {
  return table_sub(a, b);
}
inline SketchTable operator*(double c, const SketchTable& a) {
  return table_scale(a, c);
}

// sign_j(coord) * values[j][h_j(coord)] for each row j.
std::vector<double> row_estimates(const SketchTable& s, const HashFamily& f,
                                  std::int64_t coord);

// Median of the row estimates. For an even number of rows this is the mean of
// the two middle order statistics.
double point_query(const SketchTable& s, const HashFamily& f, std::int64_t coord);

// point_query for every coordinate.
Vector query_all(const SketchTable& s, const HashFamily& f);

// Median over rows of the row's squared norm; estimates ||x||^2.
double l2_estimate(const SketchTable& s);

// Median of a sample with the even-size rule above. Reorders `values`.
double median_inplace(std::span<double> values);

}  // namespace fedsketch

#endif  // FEDSKETCH_SKETCH_HPP_
