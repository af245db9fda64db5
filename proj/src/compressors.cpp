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

#include "fedsketch/compressors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsketch/errors.hpp"
#include "fedsketch/seeding.hpp"

namespace fedsketch {

std::string_view to_string(CompressorKind kind) {
  switch (kind) {
    case CompressorKind::kPrivix:
      return "PRIVIX";
    case CompressorKind::kHeavymix:
      return "HEAVYMIX";
    case CompressorKind::kHeaprix:
      return "HEAPRIX";
  }
  return "?";
}

std::string_view to_string(ValueMode mode) {
  return mode == ValueMode::kOracle ? "ORACLE" : "ESTIMATE";
}

CompressorKind parse_compressor_kind(std::string_view text) {
  if (text == "PRIVIX" || text == "privix") return CompressorKind::kPrivix;
  if (text == "HEAVYMIX" || text == "heavymix") return CompressorKind::kHeavymix;
  if (text == "HEAPRIX" || text == "heaprix") return CompressorKind::kHeaprix;
  throw ParameterError("unknown compressor '" + std::string(text) + "'");
}

ValueMode parse_value_mode(std::string_view text) {
  if (text == "ORACLE" || text == "oracle") return ValueMode::kOracle;
  if (text == "ESTIMATE" || text == "estimate") return ValueMode::kEstimate;
  throw ParameterError("unknown value mode '" + std::string(text) + "'");
}

void CompressorSpec::validate(std::int64_t d) const {
  if (buckets < 1) throw ParameterError("sketch m must be >= 1");
  if (rows < 1) throw ParameterError("sketch t must be >= 1");
  if (kind != CompressorKind::kPrivix && (heavy_budget < 1 || heavy_budget > d)) {
    throw ParameterError("heavy_budget must lie in [1, d]");
  }
}

EstimateVector privix(const SketchTable& s, const HashFamily& f) {
  return {query_all(s, f), std::nullopt};
}

EstimateVector heavymix(const SketchTable& s, const HashFamily& f,
                        std::int64_t heavy_budget, ValueMode mode, const Vector* exact) {
  const auto d = static_cast<std::int64_t>(f.dim());
  if (heavy_budget < 1 || heavy_budget > d) {
    throw ParameterError("heavy_budget must lie in [1, d]");
  }
  if (mode == ValueMode::kOracle) {
    if (exact == nullptr) throw MissingOracleError("ORACLE mode needs the exact vector");
    if (exact->size() != d) throw DimensionError("oracle vector length differs from d");
  }
  const auto budget = static_cast<std::size_t>(heavy_budget);

  const Vector est = query_all(s, f);
  const double threshold = l2_estimate(s) / static_cast<double>(heavy_budget);

  std::vector<std::size_t> heavy;
  std::vector<std::size_t> light;
  for (std::int64_t i = 0; i < d; ++i) {
    (est[i] * est[i] >= threshold ? heavy : light).push_back(static_cast<std::size_t>(i));
  }

  std::vector<std::size_t> top;
  if (heavy.size() >= budget) {
    std::stable_sort(heavy.begin(), heavy.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(est[static_cast<Eigen::Index>(a)]) >
             std::abs(est[static_cast<Eigen::Index>(b)]);
    });
    top.assign(heavy.begin(), heavy.begin() + static_cast<std::ptrdiff_t>(budget));
  } else {
    top = heavy;
    // Partial Fisher-Yates over the light coordinates.
    Rng rng(derive_seed(f.master_seed(), "heavymix-fill", f.round_tag()));
    const std::size_t fill = budget - heavy.size();
    for (std::size_t k = 0; k < fill; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, light.size() - 1);
      std::swap(light[k], light[pick(rng)]);
      top.push_back(light[k]);
    }
  }
  std::sort(top.begin(), top.end());

  const Vector& source = mode == ValueMode::kOracle ? *exact : est;
  Vector values = Vector::Zero(d);
  for (std::size_t i : top) {
    const auto ii = static_cast<Eigen::Index>(i);
    values[ii] = source[ii];
  }
  return {std::move(values), std::move(top)};
}

EstimateVector heaprix_device(const Vector& x, const HashFamily& f,
                              std::int64_t heavy_budget) {
  const SketchTable s = compress(x, f);
  EstimateVector h = heavymix(s, f, heavy_budget, ValueMode::kOracle, &x);
  const Vector residual = x - h.values;
  Vector out = h.values + query_all(compress(residual, f), f);
  return {std::move(out), std::nullopt};
}

EstimateVector heaprix_server(const SketchTable& s, const SketchTable& s_tilde,
                              const HashFamily& f, std::int64_t heavy_budget) {
  const SketchTable residual = table_sub(s, s_tilde);
  EstimateVector h = heavymix(s, f, heavy_budget, ValueMode::kEstimate);
  Vector out = h.values + query_all(residual, f);
  return {std::move(out), std::nullopt};
}

EstimateVector apply_compressor(const CompressorSpec& spec, const Vector& x,
                                const HashFamily& f) {
  switch (spec.kind) {
    case CompressorKind::kPrivix:
      return privix(compress(x, f), f);
    case CompressorKind::kHeavymix:
      return heavymix(compress(x, f), f, spec.heavy_budget, spec.value_mode, &x);
    case CompressorKind::kHeaprix:
      return heaprix_device(x, f, spec.heavy_budget);
  }
  throw ParameterError("unknown compressor kind");
}

CompressorStats compressor_stats(const CompressorSpec& spec, const Vector& x,
                                 std::int64_t trials, std::uint64_t seed) {
  if (trials < 1) throw ParameterError("trials must be >= 1");
  const auto d = x.size();
  spec.validate(d);

  // Welford accumulation in trial order.
  Vector mean = Vector::Zero(d);
  Vector m2 = Vector::Zero(d);
  double sq_sum = 0.0;
  for (std::int64_t trial = 0; trial < trials; ++trial) {
    const HashFamily f = derive_family(seed, static_cast<std::uint64_t>(trial), spec.rows,
                                       spec.buckets, d);
    const Vector err = apply_compressor(spec, x, f).values - x;
    sq_sum += err.squaredNorm();
    const Vector step = err - mean;
    mean += step / static_cast<double>(trial + 1);
    m2 += step.cwiseProduct(err - mean);
  }

  CompressorStats stats;
  stats.trials = trials;
  stats.mean_error = mean;
  stats.mean_squared_error = sq_sum / static_cast<double>(trials);
  if (trials > 1) {
    const double n = static_cast<double>(trials);
    stats.error_std_err = (m2 / (n - 1.0) / n).cwiseSqrt();
  } else {
    stats.error_std_err = Vector::Zero(d);
  }
  return stats;
}

}  // namespace fedsketch
