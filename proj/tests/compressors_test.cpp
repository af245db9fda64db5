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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include <numbers>
#include <optional>

#include <gtest/gtest.h>

#include "fedsketch/compressors.hpp"
#include "fedsketch/errors.hpp"
#include "fedsketch/seeding.hpp"
#include "fedsketch/sketch.hpp"

namespace fedsketch {
namespace {

Vector gaussian(std::int64_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Vector x(d);
  for (auto& v : x) v = normal(rng);
  return x;
}

Vector one_sparse(std::int64_t d, std::int64_t at, double value) {
  Vector x = Vector::Zero(d);
  x[at] = value;
  return x;
}

CompressorSpec spec_of(CompressorKind kind, std::int64_t m, std::int64_t t,
                       std::int64_t budget = 1, ValueMode mode = ValueMode::kOracle) {
  return {kind, m, t, budget, mode};
}

TEST(Privix, ZeroSketchDecodesToZero) {
  const HashFamily f = derive_family(1, 0, 5, 8, 32);
  const EstimateVector out = privix(compress(Vector::Zero(32), f), f);
  EXPECT_TRUE(out.values.isZero(0.0));
  EXPECT_FALSE(out.support.has_value());
}

TEST(Privix, OneSparseMatchesRowEnumeration) {
  const Vector x = one_sparse(16, 3, 5.0);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const HashFamily f = derive_family(seed, 1, 5, 8, 16);
    const EstimateVector out = privix(compress(x, f), f);
    EXPECT_EQ(out.values[3], 5.0);
    // Off-support coordinates collide with coordinate 3 in some rows; the
    // decode is zero exactly when fewer than three of the five rows collide.
    for (std::int64_t i = 0; i < 16; ++i) {
      if (i == 3) continue;
      int plus = 0;
      int minus = 0;
      for (std::int64_t j = 0; j < 5; ++j) {
        if (hash_index(f, j, i) != hash_index(f, j, 3)) continue;
        (hash_sign(f, j, i) * hash_sign(f, j, 3) > 0 ? plus : minus) += 1;
      }
      const double want = plus >= 3 ? 5.0 : (minus >= 3 ? -5.0 : 0.0);
      EXPECT_EQ(out.values[i], want) << "seed " << seed << " coord " << i;
    }
  }
}

TEST(Privix, UnbiasedOverFreshFamilies) {
  const Vector x = gaussian(64, 3);
  const CompressorStats stats = compressor_stats(spec_of(CompressorKind::kPrivix, 16, 5), x,
                                                 4000, 99);
  for (Eigen::Index i = 0; i < 64; ++i) {
    EXPECT_LE(std::abs(stats.mean_error[i]), 4.0 * stats.error_std_err[i] + 1e-12)
        << "coord " << i;
  }
}

TEST(CompressorStats, ZeroInputHasZeroError) {
  for (CompressorKind kind :
       {CompressorKind::kPrivix, CompressorKind::kHeavymix, CompressorKind::kHeaprix}) {
    const CompressorStats stats = compressor_stats(spec_of(kind, 8, 3, 4), Vector::Zero(32), 20, 1);
    EXPECT_TRUE(stats.mean_error.isZero(0.0));
    EXPECT_EQ(stats.mean_squared_error, 0.0);
  }
}

TEST(CompressorStats, SingleTrialIsFinite) {
  const CompressorStats stats =
      compressor_stats(spec_of(CompressorKind::kPrivix, 8, 3), gaussian(32, 4), 1, 2);
  EXPECT_EQ(stats.trials, 1);
  EXPECT_TRUE(std::isfinite(stats.mean_squared_error));
  EXPECT_TRUE(stats.mean_error.allFinite());
}

TEST(CompressorStats, RejectsZeroTrials) {
  EXPECT_THROW(compressor_stats(spec_of(CompressorKind::kPrivix, 8, 3), gaussian(8, 1), 0, 1),
               ParameterError);
}

TEST(CompressorStats, MatchesManualLoop) {
  const Vector x = gaussian(20, 5);
  const CompressorSpec spec = spec_of(CompressorKind::kHeaprix, 6, 3, 4);
  const CompressorStats stats = compressor_stats(spec, x, 50, 17);
  Vector mean = Vector::Zero(20);
  double mse = 0.0;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const HashFamily f = derive_family(17, trial, 3, 6, 20);
    const Vector err = heaprix_device(x, f, 4).values - x;
    mean += err;
    mse += err.squaredNorm();
  }
  EXPECT_LE((stats.mean_error - mean / 50.0).norm(), 1e-12 * (1.0 + mean.norm()));
  EXPECT_NEAR(stats.mean_squared_error, mse / 50.0, 1e-10 * mse);
}

TEST(Privix, MeanSquaredErrorWithinVarianceBound) {
  const Vector x = gaussian(64, 6);
  const CompressorStats stats =
      compressor_stats(spec_of(CompressorKind::kPrivix, 16, 5), x, 2000, 7);
  EXPECT_LE(stats.mean_squared_error, std::numbers::e * 64.0 / 16.0 * x.squaredNorm());
}

// Independent restatement of the heavy-set selection.
std::vector<std::size_t> heavy_set(const SketchTable& s, const HashFamily& f,
                                   std::int64_t budget) {
  const Vector est = query_all(s, f);
  const double threshold = l2_estimate(s) / static_cast<double>(budget);
  std::vector<std::size_t> heavy;
  for (Eigen::Index i = 0; i < est.size(); ++i) {
    if (est[i] * est[i] >= threshold) heavy.push_back(static_cast<std::size_t>(i));
  }
  return heavy;
}

TEST(Heavymix, OneSparseOracleExact) {
  const Vector x = one_sparse(32, 7, -5.0);
  int exact = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const HashFamily f = derive_family(seed, 0, 5, 8, 32);
    const SketchTable s = compress(x, f);
    const EstimateVector out = heavymix(s, f, 1, ValueMode::kOracle, &x);
    ASSERT_TRUE(out.support.has_value());
    ASSERT_EQ(out.support->size(), 1u);
    const Vector est = query_all(s, f);
    if (est == x) {
      ++exact;
      EXPECT_EQ(out.values, x);
      EXPECT_EQ(*out.support, std::vector<std::size_t>{7});
    } else {
      // A colliding coordinate with the same |estimate| and a lower index
      // wins the tie.
      const std::size_t pick = out.support->front();
      EXPECT_EQ(std::abs(est[static_cast<Eigen::Index>(pick)]), 5.0);
      EXPECT_LE(pick, 7u);
    }
  }
  EXPECT_GT(exact, 50);
}

TEST(Heavymix, FullBudgetOracleReturnsInput) {
  const Vector x = gaussian(24, 8);
  const HashFamily f = derive_family(8, 0, 3, 4, 24);
  const EstimateVector out = heavymix(compress(x, f), f, 24, ValueMode::kOracle, &x);
  EXPECT_EQ(out.values, x);
  EXPECT_EQ(out.support->size(), 24u);
}

TEST(Heavymix, SupportSizeAndOracleValues) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Vector x = gaussian(40, 100 + seed);
    const HashFamily f = derive_family(seed, 2, 5, 10, 40);
    const SketchTable s = compress(x, f);
    for (std::int64_t budget : {1, 3, 10, 40}) {
      const EstimateVector out = heavymix(s, f, budget, ValueMode::kOracle, &x);
      ASSERT_TRUE(out.support.has_value());
      const auto& support = *out.support;
      EXPECT_EQ(support.size(), static_cast<std::size_t>(budget));
      EXPECT_TRUE(std::is_sorted(support.begin(), support.end()));
      EXPECT_EQ(std::set<std::size_t>(support.begin(), support.end()).size(), support.size());
      std::set<std::size_t> in(support.begin(), support.end());
      for (Eigen::Index i = 0; i < 40; ++i) {
        const bool kept = in.contains(static_cast<std::size_t>(i));
        EXPECT_EQ(out.values[i], kept ? x[i] : 0.0);
      }
    }
  }
}

TEST(Heavymix, SelectionMatchesIndependentRule) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Vector x = gaussian(64, 200 + seed);
    x.head(4) *= 20.0;
    const HashFamily f = derive_family(seed, 3, 5, 16, 64);
    const SketchTable s = compress(x, f);
    const Vector est = query_all(s, f);
    for (std::int64_t budget : {2, 4, 8}) {
      const auto heavy = heavy_set(s, f, budget);
      const EstimateVector out = heavymix(s, f, budget, ValueMode::kEstimate);
      const auto& support = *out.support;
      if (heavy.size() >= static_cast<std::size_t>(budget)) {
        // Largest |estimate| among the heavy set, ties to the lower index.
        std::vector<std::size_t> ranked = heavy;
        std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
          const double ea = std::abs(est[static_cast<Eigen::Index>(a)]);
          const double eb = std::abs(est[static_cast<Eigen::Index>(b)]);
          return ea != eb ? ea > eb : a < b;
        });
        ranked.resize(static_cast<std::size_t>(budget));
        std::sort(ranked.begin(), ranked.end());
        EXPECT_EQ(support, ranked);
      } else {
        for (std::size_t h : heavy) {
          EXPECT_TRUE(std::binary_search(support.begin(), support.end(), h));
        }
      }
      for (std::size_t i : support) {
        EXPECT_EQ(out.values[static_cast<Eigen::Index>(i)], est[static_cast<Eigen::Index>(i)]);
      }
    }
  }
}

TEST(Heavymix, OverflowTiesBreakToLowerIndex) {
  // One row, two buckets with equal magnitude: every coordinate is heavy
  // against l2 / 2, so the two lowest indices win.
  const HashFamily f(21, 0, 1, 2, 8);
  const SketchTable equal(1, 2, f.fingerprint(), {1.0, -1.0});
  EXPECT_EQ(*heavymix(equal, f, 2, ValueMode::kEstimate).support,
            (std::vector<std::size_t>{0, 1}));

  // Bucket 0 dominates: only its coordinates are heavy; keep its two lowest.
  const SketchTable skewed(1, 2, f.fingerprint(), {2.0, 1.0});
  std::vector<std::size_t> in_zero;
  for (std::int64_t i = 0; i < 8; ++i) {
    if (hash_index(f, 0, i) == 0) in_zero.push_back(static_cast<std::size_t>(i));
  }
  ASSERT_GE(in_zero.size(), 3u);
  EXPECT_EQ(*heavymix(skewed, f, 2, ValueMode::kEstimate).support,
            (std::vector<std::size_t>{in_zero[0], in_zero[1]}));
}

TEST(Heavymix, FillIsDeterministicPerFamily) {
  const Vector x = one_sparse(50, 10, 1.0);
  const HashFamily f = derive_family(4, 5, 5, 16, 50);
  const SketchTable s = compress(x, f);
  const EstimateVector a = heavymix(s, f, 6, ValueMode::kOracle, &x);
  const EstimateVector b = heavymix(s, f, 6, ValueMode::kOracle, &x);
  EXPECT_EQ(*a.support, *b.support);
  EXPECT_TRUE(std::binary_search(a.support->begin(), a.support->end(), 10u));
}

TEST(Heavymix, FillIsRoughlyUniform) {
  const Vector x = one_sparse(20, 0, 1.0);
  std::vector<int> hits(20, 0);
  const int trials = 4000;
  for (int trial = 0; trial < trials; ++trial) {
    const HashFamily f = derive_family(5, static_cast<std::uint64_t>(trial), 3, 64, 20);
    const EstimateVector out = heavymix(compress(x, f), f, 2, ValueMode::kOracle, &x);
    for (std::size_t i : *out.support) ++hits[i];
  }
  EXPECT_EQ(hits[0], trials);
  // Each light coordinate is drawn with probability 1/19.
  const double p = 1.0 / 19.0;
  const double sd = std::sqrt(trials * p * (1 - p));
  for (int i = 1; i < 20; ++i) EXPECT_NEAR(hits[i], trials * p, 5.0 * sd) << i;
}

TEST(Heavymix, Errors) {
  const Vector x = gaussian(16, 9);
  const HashFamily f = derive_family(9, 0, 3, 8, 16);
  const SketchTable s = compress(x, f);
  EXPECT_THROW(heavymix(s, f, 2, ValueMode::kOracle), MissingOracleError);
  EXPECT_THROW(heavymix(s, f, 0, ValueMode::kEstimate), ParameterError);
  EXPECT_THROW(heavymix(s, f, 17, ValueMode::kEstimate), ParameterError);
  const Vector short_x = Vector::Zero(15);
  EXPECT_THROW(heavymix(s, f, 2, ValueMode::kOracle, &short_x), DimensionError);
}

TEST(Heavymix, PowerLawKeepsCoordinatesAboveThreshold) {
  // Only coordinates with x_i^2 >= ||x||^2 / budget are heavy; the rest of the
  // support is a uniform fill.
  Vector x(256);
  for (Eigen::Index i = 0; i < 256; ++i) x[i] = std::pow(static_cast<double>(i + 1), -1.2);
  const double threshold = x.squaredNorm() / 10.0;
  std::vector<std::size_t> clear;
  for (Eigen::Index i = 0; i < 256; ++i) {
    if (x[i] * x[i] >= 1.5 * threshold) clear.push_back(static_cast<std::size_t>(i));
  }
  ASSERT_EQ(clear.size(), 1u);
  int kept = 0;
  const int trials = 200;
  for (std::uint64_t trial = 0; trial < trials; ++trial) {
    const HashFamily f = derive_family(10, trial, 7, 64, 256);
    const EstimateVector out = heavymix(compress(x, f), f, 10, ValueMode::kOracle, &x);
    EXPECT_EQ(out.support->size(), 10u);
    bool all = true;
    for (std::size_t c : clear) {
      all &= std::binary_search(out.support->begin(), out.support->end(), c);
    }
    kept += all;
  }
  EXPECT_GE(kept, 190);
}

TEST(Heaprix, DeviceOneSparseExact) {
  const Vector x = one_sparse(32, 30, 2.5);
  // Families whose point queries are exact everywhere; otherwise a false
  // positive of equal magnitude can outrank the spike on the index tie-break.
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 200 && checked < 20; ++seed) {
    const HashFamily f = derive_family(seed, 0, 5, 8, 32);
    if (query_all(compress(x, f), f) != x) continue;
    ++checked;
    EXPECT_EQ(heaprix_device(x, f, 1).values, x);
    EXPECT_EQ(heaprix_device(x, f, 3).values, x);
  }
  EXPECT_EQ(checked, 20);
}

TEST(Heaprix, DeviceFullBudgetExact) {
  const Vector x = gaussian(32, 11);
  const HashFamily f = derive_family(11, 0, 3, 4, 32);
  EXPECT_EQ(heaprix_device(x, f, 32).values, x);
}

TEST(Heaprix, DeviceEqualsHeavyPlusResidualDecode) {
  const Vector x = gaussian(48, 12);
  const HashFamily f = derive_family(12, 0, 5, 12, 48);
  const EstimateVector h = heavymix(compress(x, f), f, 6, ValueMode::kOracle, &x);
  const Vector want = h.values + query_all(compress(x - h.values, f), f);
  EXPECT_EQ(heaprix_device(x, f, 6).values, want);
}

TEST(Heaprix, LowerMseThanPrivix) {
  const Vector x = gaussian(64, 13);
  const CompressorStats p = compressor_stats(spec_of(CompressorKind::kPrivix, 16, 5), x, 3000, 3);
  const CompressorStats h =
      compressor_stats(spec_of(CompressorKind::kHeaprix, 16, 5, 8), x, 3000, 3);
  EXPECT_LE(h.mean_squared_error, 1.05 * p.mean_squared_error);
}

TEST(Heaprix, ServerOneSparseExact) {
  const Vector x = one_sparse(32, 4, 6.0);
  const HashFamily f = derive_family(14, 0, 5, 8, 32);
  const SketchTable s = compress(x, f);
  const EstimateVector h = heavymix(s, f, 2, ValueMode::kEstimate);
  const SketchTable s_tilde = compress(h.values, f);
  EXPECT_EQ(heaprix_server(s, s_tilde, f, 2).values, x);
}

TEST(Heaprix, ServerSingleDeviceCollapse) {
  // Sparse enough that every point query is exact: the server decode of one
  // device's upload equals the device-side decode.
  Vector x = Vector::Zero(40);
  x[2] = 1.5;
  x[17] = -2.0;
  x[33] = 0.25;
  std::optional<HashFamily> found;
  for (std::uint64_t seed = 0; seed < 1000 && !found; ++seed) {
    HashFamily f(seed, 0, 5, 64, 40);
    if (query_all(compress(x, f), f) == x) found = f;
  }
  ASSERT_TRUE(found.has_value());
  const HashFamily& f = *found;
  const SketchTable s = compress(x, f);
  const SketchTable s_tilde = compress(heavymix(s, f, 40, ValueMode::kEstimate).values, f);
  const Vector server = heaprix_server(s, s_tilde, f, 40).values;
  EXPECT_EQ(server, heaprix_device(x, f, 40).values);
  EXPECT_EQ(server, x);
}

TEST(Heaprix, ServerRejectsMismatchedTables) {
  const HashFamily f = derive_family(15, 0, 3, 8, 16);
  const HashFamily g = derive_family(15, 1, 3, 8, 16);
  EXPECT_THROW(heaprix_server(SketchTable(f), SketchTable(g), f, 2), IncompatibleSketchError);
}

TEST(Compressors, ZeroMapsToZero) {
  const HashFamily f = derive_family(16, 0, 3, 8, 16);
  const Vector zero = Vector::Zero(16);
  EXPECT_TRUE(privix(compress(zero, f), f).values.isZero(0.0));
  EXPECT_TRUE(heavymix(compress(zero, f), f, 3, ValueMode::kEstimate).values.isZero(0.0));
  EXPECT_TRUE(heaprix_device(zero, f, 3).values.isZero(0.0));
}

TEST(Compressors, ApplyDispatchesOnKind) {
  const Vector x = gaussian(30, 17);
  const HashFamily f = derive_family(17, 0, 5, 8, 30);
  EXPECT_EQ(apply_compressor(spec_of(CompressorKind::kPrivix, 8, 5), x, f).values,
            privix(compress(x, f), f).values);
  EXPECT_EQ(apply_compressor(spec_of(CompressorKind::kHeavymix, 8, 5, 4), x, f).values,
            heavymix(compress(x, f), f, 4, ValueMode::kOracle, &x).values);
  EXPECT_EQ(apply_compressor(spec_of(CompressorKind::kHeavymix, 8, 5, 4, ValueMode::kEstimate),
                             x, f)
                .values,
            heavymix(compress(x, f), f, 4, ValueMode::kEstimate).values);
  EXPECT_EQ(apply_compressor(spec_of(CompressorKind::kHeaprix, 8, 5, 4), x, f).values,
            heaprix_device(x, f, 4).values);
}

TEST(CompressorSpec, Validation) {
  EXPECT_NO_THROW(spec_of(CompressorKind::kHeaprix, 8, 3, 16).validate(16));
  EXPECT_THROW(spec_of(CompressorKind::kHeaprix, 8, 3, 17).validate(16), ParameterError);
  EXPECT_THROW(spec_of(CompressorKind::kHeavymix, 8, 3, 0).validate(16), ParameterError);
  EXPECT_THROW(spec_of(CompressorKind::kPrivix, 0, 3).validate(16), ParameterError);
  EXPECT_THROW(spec_of(CompressorKind::kPrivix, 8, 0).validate(16), ParameterError);
}

TEST(Compressors, NamesRoundTrip) {
  for (CompressorKind kind :
       {CompressorKind::kPrivix, CompressorKind::kHeavymix, CompressorKind::kHeaprix}) {
    EXPECT_EQ(parse_compressor_kind(to_string(kind)), kind);
  }
  for (ValueMode mode : {ValueMode::kOracle, ValueMode::kEstimate}) {
    EXPECT_EQ(parse_value_mode(to_string(mode)), mode);
  }
  EXPECT_THROW(parse_value_mode("sometimes"), ParameterError);
}

}  // namespace
}  // namespace fedsketch
