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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fedsketch/analysis.hpp"
#include "fedsketch/compressors.hpp"
#include "fedsketch/experiment.hpp"
#include "fedsketch/fed_sim.hpp"
#include "fedsketch/problems.hpp"
#include "fedsketch/sketch.hpp"

namespace {

using namespace fedsketch;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() /
                 ("fedsketch_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Count-sketch point estimate computed straight from the hash family.
Vector oracle_privix(const Vector& x, const HashFamily& f) {
  const auto d = static_cast<std::size_t>(x.size());
  const std::size_t t = f.rows();
  const std::size_t m = f.buckets();
  std::vector<double> table(t * m, 0.0);
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      table[r * m + f.index_unchecked(r, i)] += f.sign_unchecked(r, i) * x[static_cast<Eigen::Index>(i)];
    }
  }
  Vector out(x.size());
  std::vector<double> est(t);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t r = 0; r < t; ++r) {
      est[r] = f.sign_unchecked(r, i) * table[r * m + f.index_unchecked(r, i)];
    }
    std::sort(est.begin(), est.end());
    out[static_cast<Eigen::Index>(i)] =
        t % 2 == 1 ? est[t / 2] : 0.5 * (est[t / 2 - 1] + est[t / 2]);
  }
  return out;
}

Vector gaussian(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

const double kE = std::exp(1.0);

Outcome one_sparse_recovery() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> coord(0, 255);
  std::normal_distribution<double> value(0.0, 10.0);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Vector x = Vector::Zero(256);
    const int i = coord(rng);
    x[i] = value(rng);
    const HashFamily f = derive_family(rng(), 0, 3, 8, 256);
    if (privix(compress(x, f), f).values[i] == x[i]) ++exact;
  }
  return {exact == 100, fmt("%d/100 exact", exact)};
}

Outcome sketch_linearity() {
  // Dyadic entries with bounded exponents keep every partial sum exact.
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::int64_t> mantissa(-(1 << 20), 1 << 20);
  std::uniform_int_distribution<std::int64_t> scale(-64, 64);
  const auto dyadic = [&](Eigen::Index d) {
    Vector v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = std::ldexp(static_cast<double>(mantissa(rng)), -10);
    return v;
  };
  int identical = 0;
  double worst_gaussian = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const HashFamily f = derive_family(rng(), 0, 5, 32, 300);
    const Vector x = dyadic(300);
    const Vector y = dyadic(300);
    const double c = std::ldexp(static_cast<double>(scale(rng)), -4);
    if (compress(x + c * y, f) == table_add(compress(x, f), table_scale(compress(y, f), c))) {
      ++identical;
    }
    const Vector gx = gaussian(300, rng);
    const Vector gy = gaussian(300, rng);
    const SketchTable lhs = compress(gx + 0.37 * gy, f);
    const SketchTable rhs = table_add(compress(gx, f), table_scale(compress(gy, f), 0.37));
    for (std::size_t k = 0; k < lhs.values().size(); ++k) {
      worst_gaussian = std::max(worst_gaussian, std::abs(lhs.values()[k] - rhs.values()[k]));
    }
  }
  return {identical == 100,
          fmt("%d/100 bit-identical on dyadic inputs; gaussian max abs diff %.1e", identical,
              worst_gaussian)};
}

struct PrivixMoments {
  Vector mean_error;
  Vector std_err;
  double mse = 0.0;
};

PrivixMoments privix_moments(const Vector& x, int families) {
  const Eigen::Index d = x.size();
  Vector sum = Vector::Zero(d);
  Vector sum_sq = Vector::Zero(d);
  double sq_norm = 0.0;
  for (int k = 0; k < families; ++k) {
    const HashFamily f = derive_family(303, static_cast<std::uint64_t>(k), 5, 16, d);
    const Vector err = oracle_privix(x, f) - x;
    sum += err;
    sum_sq += err.cwiseProduct(err);
    sq_norm += err.squaredNorm();
  }
  const double n = families;
  PrivixMoments out;
  out.mean_error = sum / n;
  const Vector var = (sum_sq / n - out.mean_error.cwiseProduct(out.mean_error)) * (n / (n - 1));
  out.std_err = (var / n).cwiseSqrt();
  out.mse = sq_norm / n;
  return out;
}

const Vector& dense_x() {
  static const Vector x = [] {
    std::mt19937_64 rng(304);
    return gaussian(64, rng);
  }();
  return x;
}

const PrivixMoments& dense_moments() {
  static const PrivixMoments m = privix_moments(dense_x(), 20000);
  return m;
}

Outcome privix_unbiased() {
  const PrivixMoments& m = dense_moments();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < m.mean_error.size(); ++i) {
    worst = std::max(worst, std::abs(m.mean_error[i]) / m.std_err[i]);
  }
  return {worst <= 4.0, fmt("max |mean error| = %.2f standard errors (limit 4)", worst)};
}

Outcome privix_variance() {
  const double bound = kE * 64.0 / 16.0 * dense_x().squaredNorm();
  const double mse = dense_moments().mse;
  return {mse <= 0.8 * bound,
          fmt("MSE %.3f vs bound %.3f (ratio %.3f, limit 0.8)", mse, bound, mse / bound)};
}

Outcome heaprix_dominates() {
  const Vector& x = dense_x();
  const auto mse = [&](CompressorKind kind, std::int64_t m) {
    const CompressorSpec spec{kind, m, 5, 8, ValueMode::kOracle};
    return compressor_stats(spec, x, 20000, 305).mean_squared_error;
  };
  const double privix_q = mse(CompressorKind::kPrivix, 16);
  const double heaprix_q = mse(CompressorKind::kHeaprix, 16);
  const double heaprix_full = mse(CompressorKind::kHeaprix, 64);
  const bool dominates = heaprix_q <= 1.05 * privix_q;
  const bool shrinks = heaprix_full <= 1e-2 * heaprix_q;
  return {dominates && shrinks,
          fmt("MSE heaprix/privix at m=16: %.3f (limit 1.05); heaprix m=64/m=16: %.3f (limit 0.01)",
              heaprix_q / privix_q, heaprix_full / heaprix_q)};
}

Outcome heavymix_recall() {
  const std::int64_t d = 256;
  Vector x(d);
  for (std::int64_t i = 0; i < d; ++i) x[i] = std::pow(static_cast<double>(i + 1), -1.2);
  std::vector<std::size_t> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(x[static_cast<Eigen::Index>(a)]) > std::abs(x[static_cast<Eigen::Index>(b)]);
  });
  const std::vector<std::size_t> top(order.begin(), order.begin() + 10);

  int good = 0;
  for (std::uint64_t k = 0; k < 500; ++k) {
    const HashFamily f = derive_family(606, k, 7, 64, d);
    const EstimateVector h = heavymix(compress(x, f), f, 10, ValueMode::kOracle, &x);
    int hits = 0;
    for (std::size_t i : top) {
      if (std::binary_search(h.support->begin(), h.support->end(), i)) ++hits;
    }
    if (hits >= 9) ++good;
  }
  return {good >= 450, fmt("%d/500 families recover >= 9 of top-10 (need 450)", good)};
}

Outcome identity_collapse() {
  const std::int64_t d = 12;
  const std::int64_t p = 6;
  QuadraticOptions o;
  o.dim = d;
  o.n_per_device = 5;
  o.devices = p;
  o.cond = 8.0;
  o.heterogeneity = 0.0;
  o.seed = 707;
  auto problem = std::make_shared<QuadraticProblem>(o);
  ProblemInstance inst{problem, problem->device_partition()};

  FedConfig c;
  c.p = p;
  c.k = 3;
  c.rounds = 50;
  c.tau = 4;
  c.eta = 0.03;
  c.gamma = 1.7;
  c.batch = 0;
  c.algorithm = Algorithm::kFedSgd;
  c.master_seed = 708;

  std::mt19937_64 rng(709);
  const Vector x0 = gaussian(d, rng);
  Simulator sim(c, problem, inst.partition, x0);

  // x_r - x* = V diag(mu^r) V^T (x0 - x*), mu = 1 - gamma (1 - (1 - eta lambda)^tau).
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(problem->device_hessian(0));
  const Vector& xs = problem->device_center(0);
  const Vector coeffs = eig.eigenvectors().transpose() * (x0 - xs);
  Vector mu(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    mu[i] = 1.0 - c.gamma * (1.0 - std::pow(1.0 - c.eta * eig.eigenvalues()[i], c.tau));
  }
  double worst = 0.0;
  for (std::int64_t r = 1; r <= c.rounds; ++r) {
    sim.step();
    const Vector powered = coeffs.cwiseProduct(mu.array().pow(static_cast<double>(r)).matrix());
    const Vector expect = xs + eig.eigenvectors() * powered;
    worst = std::max(worst, (sim.model() - expect).norm() / expect.norm());
  }
  return {worst <= 1e-10, fmt("max relative error %.2e over 50 rounds (limit 1e-10)", worst)};
}

const char* kHomogeneousConfig = R"(
[problem]
family = quadratic
d = 200
p = 20
n_per_device = 32
cond = 10
heterogeneity = 0
seed = 808
[fed]
algorithm = FEDSKETCH
variant = HEAPRIX
k = 10
rounds = 500
tau = 5
eta = auto
batch = 8
lr_regime = pl
seed = 809
[sketch]
m = 100
t = 10
heavy_budget = 20
[output]
name = homogeneous
)";

const char* kHeterogeneousConfig = R"(
repeats = 5
[problem]
family = logistic
d = 20
n = 2000
classes = 4
separation = 2
p = 8
partition = heterogeneous
classes_per_device = 1
seed = 909
[fed]
algorithm = FEDSKETCH
variant = HEAPRIX
k = 8
rounds = 100
tau = 5
eta = 0.5
gamma = 1
batch = full
seed = 0
[sketch]
m = 80
t = 9
heavy_budget = 10
[output]
name = heterogeneous
)";

double min_grad_norm(const ExperimentResult& r) {
  double best = INFINITY;
  for (const RoundTrace& t : r.traces.front()) best = std::min(best, t.grad_norm);
  return best;
}

Outcome homogeneous_convergence() {
  ExperimentConfig c = parse_config_text(kHomogeneousConfig);
  const ExperimentResult sketched = run_experiment(c, scratch_dir() / "c8");
  c.fed.algorithm = "FEDSGD";
  c.output.name = "baseline";
  const ExperimentResult baseline = run_experiment(c, scratch_dir() / "c8");
  const double g = min_grad_norm(sketched);
  const double g0 = min_grad_norm(baseline);
  return {g <= 1e-3 && g0 <= 1e-4,
          fmt("HEAPRIX min grad_norm %.2e (limit 1e-3); FedSGD %.2e (limit 1e-4)", g, g0)};
}

double median_final_loss(const ExperimentResult& r) {
  std::vector<double> finals;
  for (const auto& traces : r.traces) finals.push_back(traces.back().loss);
  std::sort(finals.begin(), finals.end());
  return finals[finals.size() / 2];
}

std::int64_t median_bytes(const ExperimentResult& r) {
  std::vector<std::int64_t> totals;
  for (const auto& traces : r.traces) {
    std::int64_t sum = 0;
    for (const RoundTrace& t : traces) sum += t.bytes_uplink + t.bytes_downlink;
    totals.push_back(sum);
  }
  std::sort(totals.begin(), totals.end());
  return totals[totals.size() / 2];
}

// Plain FedSKETCH must lose both at equal rounds and when given at least
// the byte budget that FedSKETCHGATE spent.
Outcome heterogeneity_gap() {
  ExperimentConfig c = parse_config_text(kHeterogeneousConfig);
  c.fed.algorithm = "FEDSKETCHGATE";
  c.output.name = "gate";
  const ExperimentResult gate = run_experiment(c, scratch_dir() / "c9");
  c.fed.algorithm = "FEDSKETCH";
  c.output.name = "plain";
  const ExperimentResult plain = run_experiment(c, scratch_dir() / "c9");

  const std::int64_t gate_bytes = median_bytes(gate);
  const double per_round = static_cast<double>(median_bytes(plain)) /
                           static_cast<double>(c.fed.rounds);
  c.fed.rounds = static_cast<std::int64_t>(std::ceil(static_cast<double>(gate_bytes) / per_round));
  c.output.name = "plain_bytes";
  ExperimentResult matched = run_experiment(c, scratch_dir() / "c9");
  while (median_bytes(matched) < gate_bytes) {
    c.fed.rounds += 5;
    matched = run_experiment(c, scratch_dir() / "c9");
  }

  const double lg = median_final_loss(gate);
  const double lp = median_final_loss(plain);
  const double lm = median_final_loss(matched);
  return {lg <= lp && lg <= lm,
          fmt("median final loss GATE %.5f; plain %.5f at 100 rounds; plain %.5f at %lld rounds "
              "(median bytes %lld vs GATE %lld)",
              lg, lp, lm, static_cast<long long>(c.fed.rounds),
              static_cast<long long>(median_bytes(matched)), static_cast<long long>(gate_bytes))};
}

Outcome analysis_consistency() {
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int lr_violations = 0;
  for (int i = 0; i < 1000; ++i) {
    TheoryParams p;
    p.L = std::exp(8.0 * u(rng) - 4.0);
    p.pl_constant = *p.L * std::exp(-6.0 * u(rng));
    p.omega = 200.0 * u(rng);
    p.k = static_cast<std::int64_t>(1 + 100 * u(rng));
    p.p = *p.k;
    p.tau = static_cast<std::int64_t>(1 + 50 * u(rng));
    p.R = static_cast<std::int64_t>(1 + 10000 * u(rng));
    if (u(rng) < 0.5) p.gamma = std::exp(6.0 * u(rng) - 3.0);
    for (Regime regime : {Regime::kNonconvex, Regime::kPl, Regime::kConvex}) {
      const LearningRates r = recommended_lr(regime, p);
      if (!stepsize_ok(r.eta, r.gamma, *p.tau, *p.L, *p.omega, *p.k)) ++lr_violations;
    }
  }

  // Feasible region sampled with l >= 2m.
  int monotone_breaks = 0;
  int feasible_pairs = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto l = static_cast<std::int64_t>(10 + 5000 * u(rng));
    const auto m = static_cast<std::int64_t>(2 + (static_cast<double>(l) / 2.0 - 3.0) * u(rng));
    const auto t = static_cast<std::int64_t>(1 + 20 * u(rng));
    const double sigma = std::exp(8.0 * u(rng));
    const double C = std::exp(2.0 * u(rng) - 1.0);
    const double alpha = 2.5 + 10.0 * u(rng);
    const PrivacyResult base = privacy_epsilon(t, m, l, sigma, C, alpha);
    const PrivacyResult more_t = privacy_epsilon(t + 1, m, l, sigma, C, alpha);
    const PrivacyResult more_m = privacy_epsilon(t, m + 1, l, sigma, C, alpha);
    if (base.feasible && more_t.feasible) {
      ++feasible_pairs;
      if (more_t.epsilon < base.epsilon) ++monotone_breaks;
    }
    if (base.feasible && more_m.feasible) {
      ++feasible_pairs;
      if (more_m.epsilon < base.epsilon) ++monotone_breaks;
    }
  }

  const double q = 4.0 * 2.0 * (1.0 + std::log(998.0)) / (100.0 * 998.0);
  const double want = std::log1p(q);
  const PrivacyResult worked = privacy_epsilon(1, 2, 1000, 10.0, 1.0, 4.0);
  const double rel = std::abs(worked.epsilon - want) / want;
  const bool pass = lr_violations == 0 && monotone_breaks == 0 && feasible_pairs > 0 &&
                    worked.feasible && rel <= 1e-9;
  return {pass, fmt("%d step-size violations in 3000 rates; %d monotonicity breaks in %d "
                    "feasible pairs; worked example rel error %.1e",
                    lr_violations, monotone_breaks, feasible_pairs, rel)};
}

Outcome determinism() {
  int identical = 0;
  int total = 0;
  for (const char* text : {kHomogeneousConfig, kHeterogeneousConfig}) {
    ExperimentConfig c = parse_config_text(text);
    c.repeats = 2;
    c.fed.algorithm = text == kHeterogeneousConfig ? "FEDSKETCHGATE" : c.fed.algorithm;
    const ExperimentResult a = run_experiment(c, scratch_dir() / "c11a");
    const ExperimentResult b = run_experiment(c, scratch_dir() / "c11b");
    for (std::size_t i = 0; i < a.csv_files.size(); ++i) {
      ++total;
      if (slurp(a.csv_files[i]) == slurp(b.csv_files[i])) ++identical;
    }
  }
  return {identical == total, fmt("%d/%d CSV pairs byte-identical", identical, total)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> check;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "exact 1-sparse recovery", 1.0, one_sparse_recovery},
      {2, "sketch linearity", 1.0, sketch_linearity},
      {3, "PRIVIX unbiasedness", 30.0, privix_unbiased},
      {4, "PRIVIX variance bound", 30.0, privix_variance},
      {5, "HEAPRIX dominates PRIVIX", 60.0, heaprix_dominates},
      {6, "HEAVYMIX recall", 30.0, heavymix_recall},
      {7, "identity-compression collapse", 5.0, identity_collapse},
      {8, "homogeneous convergence", 60.0, homogeneous_convergence},
      {9, "heterogeneity gap", 120.0, heterogeneity_gap},
      {10, "step-size and privacy consistency", 1.0, analysis_consistency},
      {11, "determinism", 60.0, determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("%s criterion %d (%s): %s; %.2f s (limit %.0f s)\n", pass ? "PASS" : "FAIL", c.id,
                c.name, o.detail.c_str(), seconds, c.budget_seconds);
    std::fflush(stdout);
  }
  fs::remove_all(scratch_dir());
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
