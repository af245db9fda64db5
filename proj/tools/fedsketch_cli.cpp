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

// Command-line front end: run, compare, privacy, check-lr.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fedsketch/analysis.hpp"
#include "fedsketch/errors.hpp"
#include "fedsketch/experiment.hpp"

namespace {

constexpr const char* kOutputDirEnv = "FEDSKETCH_OUTPUT_DIR";

std::string g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int run_command(const std::string& config_path) {
  const fedsketch::ExperimentConfig config = fedsketch::parse_config(config_path);
  std::optional<std::filesystem::path> dir;
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') {
    dir = std::filesystem::path(env);
  }
  const fedsketch::ExperimentResult result = fedsketch::run_experiment(config, dir);
  for (const auto& warning : result.warnings) std::cerr << "warning: " << warning << "\n";
  for (const auto& csv : result.csv_files) std::cout << csv.string() << "\n";
  std::cout << result.summary_file.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Count-sketch federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment config; writes CSV and JSON");
  run->add_option("config", config_path, "INI config file")->required();

  std::string run_a;
  std::string run_b;
  std::optional<double> target;
  auto* cmp = app.add_subcommand("compare", "Compare two metrics CSV files");
  cmp->add_option("a", run_a, "first metrics CSV")->required();
  cmp->add_option("b", run_b, "second metrics CSV")->required();
  cmp->add_option("--target", target, "target loss for the bytes-to-target statistic");

  std::int64_t t = 0;
  std::int64_t m = 0;
  std::int64_t l = 0;
  double sigma = 0.0;
  double clip = 0.0;
  double alpha = 0.0;
  auto* priv = app.add_subcommand("privacy", "Differential-privacy level of a count sketch");
  priv->add_option("--t", t, "sketch rows")->required();
  priv->add_option("--m", m, "sketch buckets")->required();
  priv->add_option("--l", l, "input length")->required();
  priv->add_option("--sigma", sigma, "input standard deviation")->required();
  priv->add_option("--C", clip, "input bound")->required();
  priv->add_option("--alpha", alpha, "privacy parameter alpha")->required();

  double eta = 0.0;
  double gamma = 0.0;
  std::int64_t tau = 0;
  double L = 0.0;
  double omega = 0.0;
  std::int64_t k = 0;
  bool strict = false;
  auto* lr = app.add_subcommand("check-lr", "Check the local learning-rate condition");
  lr->add_option("--eta", eta, "local learning rate")->required();
  lr->add_option("--gamma", gamma, "global learning rate")->required();
  lr->add_option("--tau", tau, "local steps")->required();
  lr->add_option("--L", L, "smoothness constant")->required();
  lr->add_option("--omega", omega, "compression factor")->required();
  lr->add_option("--k", k, "devices per round")->required();
  lr->add_flag("--strict", strict, "exit with status 2 when the condition fails");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return run_command(config_path);

    if (*cmp) {
      const fedsketch::CompareReport report = fedsketch::compare(run_a, run_b, target);
      std::cout << report.to_text();
      return 0;
    }

    if (*priv) {
      const fedsketch::PrivacyResult r = fedsketch::privacy_epsilon(t, m, l, sigma, clip, alpha);
      std::cout << "q=" << g(r.q) << "\n"
                << "budget=" << g(r.budget) << "\n"
                << "feasible=" << (r.feasible ? "true" : "false") << "\n";
      if (r.feasible) {
        std::cout << "epsilon=" << g(r.epsilon) << "\n";
      } else {
        std::cout << "epsilon=none\n";
      }
      return 0;
    }

    if (*lr) {
      const double lhs = fedsketch::stepsize_lhs(eta, gamma, tau, L, omega, k);
      const bool ok = fedsketch::stepsize_ok(eta, gamma, tau, L, omega, k);
      std::cout << "lhs=" << g(lhs) << "\n"
                << "stepsize_ok=" << (ok ? "true" : "false") << "\n"
                << "max_eta=" << g(fedsketch::max_local_lr(gamma, tau, L, omega, k)) << "\n";
      return (strict && !ok) ? 2 : 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "fedsketch: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
