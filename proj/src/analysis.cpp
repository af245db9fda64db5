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

#include "fedsketch/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedsketch/errors.hpp"

namespace fedsketch {

namespace {

template <typename T>
T need(const std::optional<T>& value, const char* name) {
  if (!value) throw ParameterError(std::string("missing field ") + name);
  return *value;
}

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ParameterError(std::string(name) + " must be positive");
  }
}

}  // namespace

double sketch_mu2(std::int64_t m, double constant) {
  if (m < 1) throw ParameterError("m must be >= 1");
  return constant / static_cast<double>(m);
}

double omega_for(Variant variant, std::int64_t m, std::int64_t d, double constant) {
  if (d < 1) throw ParameterError("d must be >= 1");
  const double privix = sketch_mu2(m, constant) * static_cast<double>(d);
  return variant == Variant::kPrivix ? privix : std::max(privix - 1.0, 0.0);
}

bool is_uncompressed_regime(std::int64_t m, std::int64_t d) { return m > d; }

double stepsize_lhs(double eta, double gamma, std::int64_t tau, double L, double omega,
                    std::int64_t k) {
  const double t = static_cast<double>(tau);
  const double a = omega / static_cast<double>(k) + 1.0;
  return t * t * L * L * eta * eta + a * eta * gamma * L * t;
}

bool stepsize_ok(double eta, double gamma, std::int64_t tau, double L, double omega,
                 std::int64_t k) {
  return stepsize_lhs(eta, gamma, tau, L, omega, k) <= 1.0;
}

double max_local_lr(double gamma, std::int64_t tau, double L, double omega, std::int64_t k) {
  require_positive(gamma, "gamma");
  require_positive(L, "L");
  if (tau < 1 || k < 1) throw ParameterError("tau and k must be >= 1");
  if (!(omega >= 0.0)) throw ParameterError("omega must be >= 0");
  const double a = omega / static_cast<double>(k) + 1.0;
  const double ag = a * gamma;
  // Rationalized root: 4 / (sqrt(ag^2 + 4) + ag) == sqrt(ag^2 + 4) - ag, without
  // cancellation for large ag.
  double eta = 4.0 / (std::sqrt(ag * ag + 4.0) + ag) / (2.0 * L * static_cast<double>(tau));
  // Step down to the last double that still satisfies the condition.
  while (stepsize_lhs(eta, gamma, tau, L, omega, k) > 1.0) eta = std::nextafter(eta, 0.0);
  return eta;
}

std::string_view to_string(Regime regime) {
  switch (regime) {
    case Regime::kNonconvex:
      return "nonconvex";
    case Regime::kPl:
      return "pl";
    case Regime::kConvex:
      return "convex";
  }
  return "?";
}

Regime parse_regime(std::string_view text) {
  if (text == "nonconvex" || text == "NONCONVEX") return Regime::kNonconvex;
  if (text == "pl" || text == "PL") return Regime::kPl;
  if (text == "convex" || text == "CONVEX") return Regime::kConvex;
  throw ParameterError("unknown regime '" + std::string(text) + "'");
}

std::optional<double> TheoryParams::kappa() const {
  if (!L || !pl_constant || *pl_constant <= 0.0) return std::nullopt;
  return *L / *pl_constant;
}

LearningRates recommended_lr(Regime regime, const TheoryParams& params) {
  const double L = need(params.L, "L");
  const double omega = need(params.omega, "omega");
  const std::int64_t k = need(params.k, "k");
  const std::int64_t tau = need(params.tau, "tau");
  require_positive(L, "L");
  if (!(omega >= 0.0)) throw ParameterError("omega must be >= 0");
  if (k < 1 || tau < 1) throw ParameterError("k and tau must be >= 1");

  LearningRates out;
  out.gamma = params.gamma.value_or(static_cast<double>(k));
  require_positive(out.gamma, "gamma");
  const double a = omega / static_cast<double>(k) + 1.0;
  const double t = static_cast<double>(tau);

  switch (regime) {
    case Regime::kNonconvex: {
      const std::int64_t R = need(params.R, "R");
      if (R < 1) throw ParameterError("R must be >= 1");
      out.eta = std::sqrt(static_cast<double>(k) / (static_cast<double>(R) * t * a)) /
                (L * out.gamma);
      break;
    }
    case Regime::kPl:
      out.eta = 1.0 / (2.0 * L * a * t * out.gamma);
      break;
    case Regime::kConvex:
      out.eta = 1.0 / (2.0 * L * a * t * out.gamma);
      out.phi = 1.0 / std::sqrt(static_cast<double>(k) * t);
      break;
  }

  const double cap = max_local_lr(out.gamma, tau, L, omega, k);
  if (out.eta > cap) {
    out.eta = cap;
    out.clamped = true;
  }
  return out;
}

std::int64_t sketch_rows(double d, double R, double delta_fail) {
  require_positive(d, "d");
  require_positive(R, "R");
  require_positive(delta_fail, "delta");
  // Guard against ln() landing an ulp above an integer.
  const double rows = std::ceil(std::log(d * R / delta_fail) - 1e-12);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(rows));
}

PrivacyResult privacy_epsilon(std::int64_t t, std::int64_t m, std::int64_t l, double sigma,
                              double C, double alpha) {
  if (t < 1) throw ParameterError("t must be >= 1");
  if (m < 2) throw ParameterError("m must be >= 2");
  if (l <= m || l <= 2) throw ParameterError("l must exceed both m and 2");
  require_positive(sigma, "sigma");
  require_positive(alpha, "alpha");
  if (!(C >= 0.0) || !std::isfinite(C)) throw ParameterError("C must be >= 0");

  const double md = static_cast<double>(m);
  const double ld = static_cast<double>(l);
  PrivacyResult out;
  out.q = alpha * C * C * md * (md - 1.0) * (1.0 + std::log(ld - md)) /
          (sigma * sigma * (ld - 2.0));
  out.budget = 0.5 - 1.0 / alpha;
  out.feasible = out.q <= out.budget;
  if (out.feasible) out.epsilon = static_cast<double>(t) * std::log1p(out.q);
  return out;
}

}  // namespace fedsketch
