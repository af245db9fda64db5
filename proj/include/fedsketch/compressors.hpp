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

#ifndef FEDSKETCH_COMPRESSORS_HPP_
#define FEDSKETCH_COMPRESSORS_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedsketch/sketch.hpp"

namespace fedsketch {

enum class CompressorKind { kPrivix, kHeavymix, kHeaprix };

// Where HEAVYMIX takes the values of its selected coordinates from: the exact
// input vector (when the caller holds it) or the sketch's point queries.
enum class ValueMode { kOracle, kEstimate };

std::string_view to_string(CompressorKind kind);
std::string_view to_string(ValueMode mode);
CompressorKind parse_compressor_kind(std::string_view text);
ValueMode parse_value_mode(std::string_view text);

struct CompressorSpec {
  CompressorKind kind = CompressorKind::kPrivix;
  std::int64_t buckets = 1;       // m
  std::int64_t rows = 1;          // t
  std::int64_t heavy_budget = 1;  // coordinates kept by HEAVYMIX
  ValueMode value_mode = ValueMode::kOracle;

  // Throws ParameterError when the geometry is invalid for dimension d.
  void validate(std::int64_t d) const;

  friend bool operator==(const CompressorSpec&, const CompressorSpec&) = default;
};

struct EstimateVector {
  Vector values;
  // Ascending coordinate ids; set only by HEAVYMIX.
  std::optional<std::vector<std::size_t>> support;
};

// Unbiased estimate: the median point query of every coordinate.
EstimateVector privix(const SketchTable& s, const HashFamily& f);

// Heavy-hitter decompressor.
//
// Coordinates with squared point query >= l2_estimate(s) / heavy_budget are
// heavy. If more than heavy_budget are heavy the largest |estimate| win (ties
// to the lower index); otherwise the set is padded with uniformly drawn
// non-heavy coordinates. The padding draw is seeded from the family, so the
// same table and family always select the same support. Selected coordinates
// take their values from `exact` (kOracle) or from the point queries
// (kEstimate); everything else is zero.
EstimateVector heavymix(const SketchTable& s, const HashFamily& f,
                        std::int64_t heavy_budget, ValueMode mode,
                        const Vector* exact = nullptr);

// Device-side HEAPRIX with the input in hand:
//   h = HEAVYMIX[S(x)] (oracle values),  h + PRIVIX[S(x - h)].
EstimateVector heaprix_device(const Vector& x, const HashFamily& f,
                              std::int64_t heavy_budget);

// Server-side HEAPRIX from an averaged sketch `s` and the averaged sketch of
// the devices' HEAVYMIX reconstructions `s_tilde`:
//   HEAVYMIX[s] (estimated values) + PRIVIX[s - s_tilde].
EstimateVector heaprix_server(const SketchTable& s, const SketchTable& s_tilde,
                              const HashFamily& f, std::int64_t heavy_budget);

// Applies the compressor described by `spec` to x with family f.
EstimateVector apply_compressor(const CompressorSpec& spec, const Vector& x,
                                const HashFamily& f);

struct CompressorStats {
  Vector mean_error;      // per-coordinate mean of C(x) - x
  Vector error_std_err;   // standard error of mean_error
  double mean_squared_error = 0.0;  // mean of ||C(x) - x||^2
  std::int64_t trials = 0;
};

// Monte Carlo over fresh families derive_family(seed, trial, ...).
CompressorStats compressor_stats(const CompressorSpec& spec, const Vector& x,
                                 std::int64_t trials, std::uint64_t seed);

}  // namespace fedsketch

#endif  // FEDSKETCH_COMPRESSORS_HPP_
