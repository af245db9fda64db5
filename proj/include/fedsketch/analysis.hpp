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

#ifndef FEDSKETCH_ANALYSIS_HPP_
#define FEDSKETCH_ANALYSIS_HPP_

#include <cstdint>
#include <numbers>
#include <optional>
#include <string_view>

#include "fedsketch/fed_sim.hpp"

namespace fedsketch {

// Constant c in mu^2 = c / m. Every big-O constant in this module defaults to
// the bare rate (c = e, row constant 1).
inline constexpr double kSketchAccuracyConstant = std::numbers::e;

double sketch_mu2(std::int64_t m, double constant = kSketchAccuracyConstant);

// Compression factor: mu^2 d for PRIVIX, max(mu^2 d - 1, 0) for HEAPRIX.
// m > d is accepted (no compression); see is_uncompressed_regime.
double omega_for(Variant variant, std::int64_t m, std::int64_t d,
                 double constant = kSketchAccuracyConstant);
bool is_uncompressed_regime(std::int64_t m, std::int64_t d);

// tau^2 L^2 eta^2 + (omega/k + 1) eta gamma L tau.
double stepsize_lhs(double eta, double gamma, std::int64_t tau, double L, double omega,
                    std::int64_t k);
// Local learning-rate condition: stepsize_lhs(...) <= 1.
bool stepsize_ok(double eta, double gamma, std::int64_t tau, double L, double omega,
                 std::int64_t k);
// Largest eta satisfying the condition:
//   (sqrt(a^2 gamma^2 + 4) - a gamma) / (2 L tau),  a = omega/k + 1.
double max_local_lr(double gamma, std::int64_t tau, double L, double omega, std::int64_t k);

enum class Regime { kNonconvex, kPl, kConvex };
std::string_view to_string(Regime regime);
Regime parse_regime(std::string_view text);

struct TheoryParams {
  std::optional<double> L;
  std::optional<double> pl_constant;
  std::optional<double> sigma2;
  std::optional<double> omega;
  std::optional<std::int64_t> d;
  std::optional<std::int64_t> m;
  std::optional<std::int64_t> t;
  std::optional<std::int64_t> k;
  std::optional<std::int64_t> p;
  std::optional<std::int64_t> tau;
  std::optional<std::int64_t> R;
  std::optional<double> eta;
  std::optional<double> gamma;  // unset: gamma = k
  std::optional<double> delta_fail;
  std::optional<double> sketch_mu2;

  std::optional<double> kappa() const;
};

struct LearningRates {
  double eta = 0.0;
  double gamma = 0.0;
  std::optional<double> phi;  // regularization weight, convex regime only
  // The formula exceeded max_local_lr and eta was lowered to it.
  bool clamped = false;
};

// Recommended step sizes, with a = omega/k + 1:
//   nonconvex: eta = sqrt(k / (R tau a)) / (L gamma)
//   PL:        eta = 1 / (2 L a tau gamma)
//   convex:    PL step on f + phi/2 ||x||^2 with phi = 1/sqrt(k tau)
// The returned eta never exceeds max_local_lr. Throws ParameterError when a
// field the regime needs is missing.
LearningRates recommended_lr(Regime regime, const TheoryParams& params);

// Rows t = ceil(ln(d R / delta_fail)), at least one.
std::int64_t sketch_rows(double d, double R, double delta_fail);

struct PrivacyResult {
  bool feasible = false;
  double q = 0.0;        // alpha C^2 m (m-1) (1 + ln(l-m)) / (sigma^2 (l-2))
  double budget = 0.0;   // 1/2 - 1/alpha, the largest admissible q
  double epsilon = 0.0;  // t ln(1 + q) when feasible
};

// Differential-privacy level of a t x m count sketch over length-l inputs
// whose entries are i.i.d. N(0, sigma^2) and bounded by C. The guarantee
// only holds under that input model.
PrivacyResult privacy_epsilon(std::int64_t t, std::int64_t m, std::int64_t l, double sigma,
                              double C, double alpha);

}  // namespace fedsketch

#endif  // FEDSKETCH_ANALYSIS_HPP_
