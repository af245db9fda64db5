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

#ifndef FEDSKETCH_EXPERIMENT_HPP_
#define FEDSKETCH_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedsketch/analysis.hpp"
#include "fedsketch/fed_sim.hpp"
#include "fedsketch/problems.hpp"

namespace fedsketch {

// INI-style experiment description:
//
//   repeats = 1
//   [problem]  family, d, n, n_per_device, p, partition, heterogeneity, cond,
//              classes, classes_per_device, separation, reg, csv_path, seed
//   [fed]      algorithm, variant, k, rounds, tau, eta, gamma, batch,
//              lr_regime, seed, synchronized_batches, debug_checks
//   [sketch]   m, t, heavy_budget, value_mode
//   [output]   dir, name, wall_clock
//   [privacy]  l, sigma, C, alpha        (optional section)
//
// fed.eta = auto takes eta from recommended_lr(fed.lr_regime); gamma then
// defaults to k instead of 1.

struct ProblemSection {
  std::string family = "quadratic";  // quadratic | logistic | csv
  std::int64_t d = 10;
  std::int64_t n = 1000;             // logistic samples
  std::int64_t n_per_device = 32;    // quadratic samples per device
  std::int64_t p = 1;
  std::string partition = "homogeneous";  // homogeneous | heterogeneous
  double heterogeneity = 0.0;
  double cond = 1.0;
  std::int64_t classes = 2;
  std::int64_t classes_per_device = 1;
  double separation = 6.0;
  double reg = 1e-4;
  std::string csv_path;
  std::uint64_t seed = 0;

  friend bool operator==(const ProblemSection&, const ProblemSection&) = default;
};

struct FedSection {
  std::string algorithm = "FEDSKETCH";
  std::string variant = "PRIVIX";
  std::optional<std::int64_t> k;  // defaults to problem.p
  std::int64_t rounds = 0;
  std::int64_t tau = 1;
  std::optional<double> eta;      // unset = auto
  std::optional<double> gamma;
  std::int64_t batch = 0;
  std::string lr_regime = "pl";
  std::uint64_t seed = 0;
  bool synchronized_batches = false;
  bool debug_checks = false;

  friend bool operator==(const FedSection&, const FedSection&) = default;
};

struct SketchSection {
  std::int64_t m = 1;
  std::int64_t t = 1;
  std::int64_t heavy_budget = 1;
  std::string value_mode = "ESTIMATE";

  friend bool operator==(const SketchSection&, const SketchSection&) = default;
};

struct OutputSection {
  std::string dir = "results";
  std::string name = "run";
  // Record per-round wall time in the CSV. Off by default so reruns are
  // byte-identical.
  bool wall_clock = false;

  friend bool operator==(const OutputSection&, const OutputSection&) = default;
};

struct PrivacySection {
  std::int64_t l = 0;
  double sigma = 1.0;
  double C = 1.0;
  double alpha = 4.0;

  friend bool operator==(const PrivacySection&, const PrivacySection&) = default;
};

struct ExperimentConfig {
  ProblemSection problem;
  FedSection fed;
  SketchSection sketch;
  OutputSection output;
  std::optional<PrivacySection> privacy;
  std::int64_t repeats = 1;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Throws IoError for unreadable files and ConfigError listing every problem.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text);
std::string serialize_config(const ExperimentConfig& config);

// Builds the problem instance described by the [problem] section.
ProblemInstance build_problem(const ExperimentConfig& config);

struct ResolvedRates {
  double eta = 0.0;
  double gamma = 0.0;
  bool automatic = false;
  bool clamped = false;
  double omega = 0.0;
  std::optional<double> smoothness;
  std::optional<bool> stepsize_ok;
  std::optional<double> stepsize_lhs;
  std::optional<double> max_eta;
};

ResolvedRates resolve_rates(const ExperimentConfig& config, const Problem& problem);
FedConfig make_fed_config(const ExperimentConfig& config, const Problem& problem,
                          std::uint64_t seed);

inline constexpr const char* kCsvHeader =
    "round,loss,grad_norm,train_accuracy,bytes_up,bytes_down,cumulative_bytes,wall_seconds";

// Writes the metrics CSV for one repeat: the initial snapshot then one row per
// round.
void write_metrics_csv(const std::filesystem::path& path, const RoundTrace& initial,
                       const std::vector<RoundTrace>& rounds, bool wall_clock);

struct ExperimentResult {
  std::vector<std::filesystem::path> csv_files;
  std::filesystem::path summary_file;
  std::vector<std::vector<RoundTrace>> traces;  // per repeat, snapshot first
  std::vector<std::string> warnings;
};

// Runs every repeat (seed = fed.seed + repeat index) and writes
// <dir>/<name>_rep<i>.csv plus <dir>/<name>_summary.json. `output_dir`
// overrides output.dir.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                std::optional<std::filesystem::path> output_dir = std::nullopt);

struct MetricsRow {
  std::int64_t round = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::optional<double> accuracy;
  std::int64_t bytes_up = 0;
  std::int64_t bytes_down = 0;
  std::int64_t cumulative_bytes = 0;
  double wall_seconds = 0.0;
};

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct CompareRow {
  std::int64_t round = 0;
  double loss_a = 0.0;
  double loss_b = 0.0;
  double grad_norm_a = 0.0;
  double grad_norm_b = 0.0;
  std::int64_t cumulative_bytes_a = 0;
  std::int64_t cumulative_bytes_b = 0;
  double loss_delta() const { return loss_b - loss_a; }
  double grad_norm_delta() const { return grad_norm_b - grad_norm_a; }
};

struct CompareReport {
  std::vector<CompareRow> rows;  // rounds present in both runs
  MetricsRow final_a;
  MetricsRow final_b;
  double target_loss = 0.0;
  // Cumulative bytes at the first row with loss <= target_loss.
  std::optional<std::int64_t> bytes_to_target_a;
  std::optional<std::int64_t> bytes_to_target_b;

  std::string to_text() const;
};

// Aligns two metrics CSVs by round. The target defaults to the larger of the
// two final losses.
CompareReport compare(const std::filesystem::path& run_a, const std::filesystem::path& run_b,
                      std::optional<double> target_loss = std::nullopt);

}  // namespace fedsketch

#endif  // FEDSKETCH_EXPERIMENT_HPP_
