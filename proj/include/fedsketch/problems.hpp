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

#ifndef FEDSKETCH_PROBLEMS_HPP_
#define FEDSKETCH_PROBLEMS_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedsketch/seeding.hpp"
#include "fedsketch/sketch.hpp"

namespace fedsketch {

// Differentiable finite-sum objective. Samples are addressed by global index;
// devices see them through a Shard.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::size_t dim() const = 0;
  virtual std::size_t num_samples() const = 0;

  // Mean loss over `samples` (plus any regularizer).
  virtual double loss(const Vector& model, std::span<const std::size_t> samples) const = 0;

  // Mean gradient over `samples`. Repeats count with multiplicity. Samples
  // are accumulated in the order given.
  virtual Vector mean_grad(const Vector& model,
                           std::span<const std::size_t> samples) const = 0;

  virtual std::optional<double> accuracy(const Vector& /*model*/,
                                         std::span<const std::size_t> /*samples*/) const {
    return std::nullopt;
  }

  virtual std::optional<double> optimum_value() const { return std::nullopt; }
  virtual std::optional<double> smoothness() const { return std::nullopt; }
  virtual std::optional<double> pl_constant() const { return std::nullopt; }
};

struct Shard {
  std::vector<std::size_t> indices;
  std::size_t size() const { return indices.size(); }
};

// Disjoint shards covering all samples, with q_j = n_j / n.
struct Partition {
  std::vector<Shard> shards;
  std::vector<double> weights;

  std::size_t devices() const { return shards.size(); }
  // Checks disjointness, coverage of [0, num_samples) and sum(q) == 1.
  void validate(std::size_t num_samples) const;
};

Partition make_partition(std::vector<Shard> shards);

struct ProblemInstance {
  std::shared_ptr<const Problem> problem;
  Partition partition;
};

// f(x) = sum_j q_j F_j(x) and its gradient.
double objective(const Problem& problem, const Partition& partition, const Vector& model);
Vector objective_grad(const Problem& problem, const Partition& partition,
                      const Vector& model);
// Sample-weighted accuracy over all shards, when the problem reports one.
std::optional<double> objective_accuracy(const Problem& problem, const Partition& partition,
                                         const Vector& model);

Vector full_grad(const Problem& problem, const Shard& shard, const Vector& model);

// Mean gradient over b samples drawn uniformly with replacement from the
// shard. Unbiased for full_grad(shard).
Vector stochastic_grad(const Problem& problem, const Shard& shard, const Vector& model,
                       std::int64_t b, Rng& rng);

// Sample variance E||g_b - g||^2 of stochastic_grad around full_grad,
// estimated from `draws` mini-batches.
double estimate_gradient_variance(const Problem& problem, const Shard& shard,
                                  const Vector& model, std::int64_t b,
                                  std::int64_t draws, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic quadratic.
//
// Device j holds n_per_device samples; sample s contributes
//   L(x, s) = 1/2 (x - b_j)^T Q_j diag(lambda * w_s) Q_j^T (x - b_j)
// with positive weights w_s whose per-device mean is one. So
//   F_j(x) = 1/2 (x - b_j)^T A_j (x - b_j),  A_j = Q_j diag(lambda) Q_j^T,
// lambda spans [1, cond], and every per-sample gradient vanishes at b_j:
// mini-batch noise shrinks with the distance to the optimum.
// heterogeneity = 0 gives every device the same rotation, center and
// sample weights.

struct QuadraticOptions {
  std::int64_t dim = 2;
  std::int64_t n_per_device = 16;
  std::int64_t devices = 1;
  double cond = 1.0;
  double heterogeneity = 0.0;
  std::uint64_t seed = 0;
  // Spread of the sample weights around one, in [0, 1).
  double weight_spread = 0.5;
};

class QuadraticProblem final : public Problem {
 public:
  explicit QuadraticProblem(const QuadraticOptions& options);

  // Explicit per-device data; weights is (samples per device) x dim.
  QuadraticProblem(Vector spectrum, std::vector<Eigen::MatrixXd> rotations,
                   std::vector<Vector> centers, std::vector<Eigen::MatrixXd> weights);

  std::size_t dim() const override { return static_cast<std::size_t>(spectrum_.size()); }
  std::size_t num_samples() const override { return devices() * per_device_; }
  std::size_t devices() const { return centers_.size(); }
  std::size_t samples_per_device() const { return per_device_; }

  double loss(const Vector& model, std::span<const std::size_t> samples) const override;
  Vector mean_grad(const Vector& model,
                   std::span<const std::size_t> samples) const override;

  std::optional<double> optimum_value() const override { return optimum_value_; }
  std::optional<double> smoothness() const override { return spectrum_.maxCoeff(); }
  std::optional<double> pl_constant() const override { return spectrum_.minCoeff(); }

  // Hessian of F_j, using the realized mean sample weights.
  Eigen::MatrixXd device_hessian(std::size_t device) const;
  const Vector& device_center(std::size_t device) const { return centers_[device]; }
  // Minimizer of the equally weighted sum of device objectives.
  const Vector& optimum() const { return optimum_; }

  Partition device_partition() const;

 private:
  std::size_t device_of(std::size_t sample) const { return sample / per_device_; }
  const Eigen::MatrixXd& rotation(std::size_t device) const {
    return rotations_.size() == 1 ? rotations_[0] : rotations_[device];
  }
  const Eigen::MatrixXd& weights(std::size_t device) const {
    return weights_.size() == 1 ? weights_[0] : weights_[device];
  }
  void finish_setup();
  void check_samples(const Vector& model, std::span<const std::size_t> samples) const;

  Vector spectrum_;
  std::vector<Eigen::MatrixXd> rotations_;  // one shared or one per device
  std::vector<Vector> centers_;
  std::vector<Eigen::MatrixXd> weights_;    // one shared or one per device
  std::vector<Vector> mean_weights_;
  std::size_t per_device_ = 0;
  Vector optimum_;
  double optimum_value_ = 0.0;
};

ProblemInstance make_quadratic(const QuadraticOptions& options);

// ---------------------------------------------------------------------------
// Labeled data and multinomial logistic regression.

struct Dataset {
  Eigen::MatrixXd features;  // n x d
  std::vector<int> labels;   // values in [0, classes)
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }
};

// Gaussian class-conditional features: class c has mean separation * u_c for
// a random unit vector u_c and identity covariance. Labels are balanced.
Dataset make_logistic(std::int64_t d, std::int64_t n, std::int64_t classes,
                      std::uint64_t seed, double separation = 6.0);

// Rows of feature columns followed by an integer label column. A first row
// that does not parse as numbers is treated as a header.
Dataset load_csv_dataset(const std::filesystem::path& path,
                         std::optional<int> classes = std::nullopt);

Partition partition_homogeneous(const Dataset& data, std::int64_t p, std::uint64_t seed);

// Device j holds labels {(j*c + r) mod classes : r < c} for c =
// classes_per_device; each label's samples are split evenly over the
// devices holding it.
Partition partition_heterogeneous(const Dataset& data, std::int64_t p,
                                  std::int64_t classes_per_device, std::uint64_t seed);

// Softmax regression with a bias per class. Parameters are laid out class by
// class as [w_c (d values), bias_c]. Loss is mean cross-entropy plus
// reg/2 * ||theta||^2.
class LogisticProblem final : public Problem {
 public:
  explicit LogisticProblem(std::shared_ptr<const Dataset> data, double reg = 1e-4);

  std::size_t dim() const override;
  std::size_t num_samples() const override { return data_->size(); }

  double loss(const Vector& model, std::span<const std::size_t> samples) const override;
  Vector mean_grad(const Vector& model,
                   std::span<const std::size_t> samples) const override;
  std::optional<double> accuracy(const Vector& model,
                                 std::span<const std::size_t> samples) const override;

  std::optional<double> smoothness() const override { return smoothness_; }
  std::optional<double> pl_constant() const override { return reg_; }

  const Dataset& data() const { return *data_; }
  double regularization() const { return reg_; }

 private:
  // Class logits for one sample.
  Vector logits(const Eigen::Map<const Eigen::MatrixXd>& weights, std::size_t sample) const;

  std::shared_ptr<const Dataset> data_;
  double reg_;
  double smoothness_ = 0.0;
};

}  // namespace fedsketch

#endif  // FEDSKETCH_PROBLEMS_HPP_
