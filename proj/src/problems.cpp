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

#include "fedsketch/problems.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include "fedsketch/errors.hpp"

namespace fedsketch {

namespace {

Vector gaussian_vector(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

Eigen::MatrixXd random_rotation(Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    for (Eigen::Index r = 0; r < d; ++r) g(r, c) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
}

// Rows are samples, columns coordinates; each column has mean one.
Eigen::MatrixXd sample_weights(Eigen::Index samples, Eigen::Index d, double spread,
                               Rng& rng) {
  std::uniform_real_distribution<double> uniform(1.0 - spread, 1.0 + spread);
  Eigen::MatrixXd w(samples, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    for (Eigen::Index r = 0; r < samples; ++r) w(r, c) = uniform(rng);
    w.col(c) /= w.col(c).mean();
  }
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// Partitions and objective helpers.

void Partition::validate(std::size_t num_samples) const {
  if (shards.empty()) throw ParameterError("partition has no shards");
  if (weights.size() != shards.size()) {
    throw ParameterError("partition needs one weight per shard");
  }
  std::vector<char> seen(num_samples, 0);
  std::size_t covered = 0;
  for (const Shard& shard : shards) {
    if (shard.indices.empty()) throw ParameterError("partition has an empty shard");
    for (std::size_t i : shard.indices) {
      if (i >= num_samples) throw IndexError("partition references a missing sample");
      if (seen[i] != 0) throw ParameterError("partition shards overlap");
      seen[i] = 1;
      ++covered;
    }
  }
  if (covered != num_samples) throw ParameterError("partition does not cover the dataset");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12) throw ParameterError("partition weights must sum to 1");
}

Partition make_partition(std::vector<Shard> shards) {
  std::size_t n = 0;
  for (const Shard& s : shards) n += s.size();
  if (n == 0) throw ParameterError("partition over an empty dataset");
  Partition out;
  out.weights.reserve(shards.size());
  for (const Shard& s : shards) {
    out.weights.push_back(static_cast<double>(s.size()) / static_cast<double>(n));
  }
  out.shards = std::move(shards);
  return out;
}

double objective(const Problem& problem, const Partition& partition, const Vector& model) {
  double total = 0.0;
  for (std::size_t j = 0; j < partition.devices(); ++j) {
    total += partition.weights[j] * problem.loss(model, partition.shards[j].indices);
  }
  return total;
}

Vector objective_grad(const Problem& problem, const Partition& partition,
                      const Vector& model) {
  Vector g = Vector::Zero(static_cast<Eigen::Index>(problem.dim()));
  for (std::size_t j = 0; j < partition.devices(); ++j) {
    g += partition.weights[j] * problem.mean_grad(model, partition.shards[j].indices);
  }
  return g;
}

std::optional<double> objective_accuracy(const Problem& problem, const Partition& partition,
                                         const Vector& model) {
  double total = 0.0;
  for (std::size_t j = 0; j < partition.devices(); ++j) {
    auto acc = problem.accuracy(model, partition.shards[j].indices);
    if (!acc) return std::nullopt;
    total += partition.weights[j] * *acc;
  }
  return total;
}

Vector full_grad(const Problem& problem, const Shard& shard, const Vector& model) {
  return problem.mean_grad(model, shard.indices);
}

Vector stochastic_grad(const Problem& problem, const Shard& shard, const Vector& model,
                       std::int64_t b, Rng& rng) {
  if (b < 1 || static_cast<std::size_t>(b) > shard.size()) {
    throw ParameterError("batch size " + std::to_string(b) + " outside [1, " +
                         std::to_string(shard.size()) + "]");
  }
  std::uniform_int_distribution<std::size_t> pick(0, shard.size() - 1);
  std::vector<std::size_t> batch(static_cast<std::size_t>(b));
  for (std::size_t& s : batch) s = shard.indices[pick(rng)];
  return problem.mean_grad(model, batch);
}

double estimate_gradient_variance(const Problem& problem, const Shard& shard,
                                  const Vector& model, std::int64_t b,
                                  std::int64_t draws, Rng& rng) {
  if (draws < 2) throw ParameterError("variance estimate needs at least two draws");
  const Vector g = full_grad(problem, shard, model);
  double total = 0.0;
  for (std::int64_t k = 0; k < draws; ++k) {
    total += (stochastic_grad(problem, shard, model, b, rng) - g).squaredNorm();
  }
  return total / static_cast<double>(draws);
}

// ---------------------------------------------------------------------------
// Quadratic.

QuadraticProblem::QuadraticProblem(const QuadraticOptions& o) {
  if (o.dim < 1) throw ParameterError("quadratic: d must be >= 1");
  if (o.devices < 1) throw ParameterError("quadratic: p must be >= 1");
  if (o.n_per_device < 1) throw ParameterError("quadratic: n_per_device must be >= 1");
  if (!(o.cond >= 1.0) || !std::isfinite(o.cond)) {
    throw ParameterError("quadratic: cond must be >= 1");
  }
  if (!(o.heterogeneity >= 0.0)) throw ParameterError("quadratic: heterogeneity must be >= 0");
  if (!(o.weight_spread >= 0.0 && o.weight_spread < 1.0)) {
    throw ParameterError("quadratic: weight_spread must lie in [0, 1)");
  }

  const Eigen::Index d = o.dim;
  const auto p = static_cast<std::size_t>(o.devices);
  Rng rng(derive_seed(o.seed, "quadratic"));

  spectrum_ = d == 1 ? Vector(Vector::Constant(1, 1.0))
                     : Vector(Vector::LinSpaced(d, 1.0, o.cond));
  const Vector base = gaussian_vector(d, rng);
  per_device_ = static_cast<std::size_t>(o.n_per_device);

  const bool homogeneous = o.heterogeneity == 0.0;
  const std::size_t distinct = homogeneous ? 1 : p;
  for (std::size_t j = 0; j < distinct; ++j) {
    rotations_.push_back(random_rotation(d, rng));
    weights_.push_back(sample_weights(o.n_per_device, d, o.weight_spread, rng));
  }
  for (std::size_t j = 0; j < p; ++j) {
    centers_.push_back(homogeneous ? base
                                   : Vector(base + o.heterogeneity * gaussian_vector(d, rng)));
  }
  finish_setup();
}

QuadraticProblem::QuadraticProblem(Vector spectrum, std::vector<Eigen::MatrixXd> rotations,
                                   std::vector<Vector> centers,
                                   std::vector<Eigen::MatrixXd> weights)
    : spectrum_(std::move(spectrum)),
      rotations_(std::move(rotations)),
      centers_(std::move(centers)),
      weights_(std::move(weights)) {
  if (spectrum_.size() == 0 || (spectrum_.array() <= 0.0).any()) {
    throw ParameterError("quadratic: spectrum must be positive");
  }
  if (centers_.empty() || weights_.empty()) throw ParameterError("quadratic: no devices");
  per_device_ = static_cast<std::size_t>(weights_.front().rows());
  finish_setup();
}

void QuadraticProblem::finish_setup() {
  const Eigen::Index d = spectrum_.size();
  const std::size_t p = centers_.size();
  const auto shared_or_all = [p](std::size_t n) { return n == 1 || n == p; };
  if (!shared_or_all(rotations_.size()) || !shared_or_all(weights_.size())) {
    throw ParameterError("quadratic: need one shared or one per-device rotation/weights");
  }
  for (const auto& q : rotations_) {
    if (q.rows() != d || q.cols() != d) throw DimensionError("quadratic: rotation shape");
  }
  for (const auto& c : centers_) {
    if (c.size() != d) throw DimensionError("quadratic: center length");
  }
  for (const auto& w : weights_) {
    if (w.cols() != d || static_cast<std::size_t>(w.rows()) != per_device_ || per_device_ == 0) {
      throw DimensionError("quadratic: weights shape");
    }
  }

  mean_weights_.clear();
  for (const auto& w : weights_) mean_weights_.push_back(w.colwise().mean().transpose());

  Eigen::MatrixXd hess_sum = Eigen::MatrixXd::Zero(d, d);
  Vector rhs = Vector::Zero(d);
  for (std::size_t j = 0; j < p; ++j) {
    const Eigen::MatrixXd a = device_hessian(j);
    hess_sum += a;
    rhs += a * centers_[j];
  }
  optimum_ = hess_sum.ldlt().solve(rhs);

  double value = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    const Vector diff = optimum_ - centers_[j];
    value += 0.5 * diff.dot(device_hessian(j) * diff);
  }
  optimum_value_ = value / static_cast<double>(p);
}

Eigen::MatrixXd QuadraticProblem::device_hessian(std::size_t device) const {
  const Eigen::MatrixXd& q = rotation(device);
  const Vector& wbar = mean_weights_[mean_weights_.size() == 1 ? 0 : device];
  return q * spectrum_.cwiseProduct(wbar).asDiagonal() * q.transpose();
}

namespace {

// Per-device sums of sample weight rows, in ascending device order.
template <typename DeviceOf, typename Weights>
std::map<std::size_t, Vector> weight_sums(std::span<const std::size_t> samples,
                                          std::size_t per_device, DeviceOf device_of,
                                          Weights weights) {
  std::map<std::size_t, Vector> sums;
  for (std::size_t s : samples) {
    const std::size_t j = device_of(s);
    const auto row = static_cast<Eigen::Index>(s % per_device);
    auto [it, inserted] = sums.try_emplace(j);
    if (inserted) {
      it->second = weights(j).row(row).transpose();
    } else {
      it->second += weights(j).row(row).transpose();
    }
  }
  return sums;
}

}  // namespace

void QuadraticProblem::check_samples(const Vector& model,
                                     std::span<const std::size_t> samples) const {
  if (samples.empty()) throw ParameterError("quadratic: no samples");
  if (model.size() != spectrum_.size()) throw DimensionError("quadratic: model length");
  for (std::size_t s : samples) {
    if (s >= num_samples()) throw IndexError("quadratic: sample index out of range");
  }
}

double QuadraticProblem::loss(const Vector& model,
                              std::span<const std::size_t> samples) const {
  check_samples(model, samples);
  const auto sums = weight_sums(
      samples, per_device_, [this](std::size_t s) { return device_of(s); },
      [this](std::size_t j) -> const Eigen::MatrixXd& { return weights(j); });
  double total = 0.0;
  for (const auto& [j, wsum] : sums) {
    const Vector y = rotation(j).transpose() * (model - centers_[j]);
    total += 0.5 * y.dot(spectrum_.cwiseProduct(wsum).cwiseProduct(y));
  }
  return total / static_cast<double>(samples.size());
}

Vector QuadraticProblem::mean_grad(const Vector& model,
                                   std::span<const std::size_t> samples) const {
  check_samples(model, samples);
  const auto sums = weight_sums(
      samples, per_device_, [this](std::size_t s) { return device_of(s); },
      [this](std::size_t j) -> const Eigen::MatrixXd& { return weights(j); });
  Vector g = Vector::Zero(spectrum_.size());
  for (const auto& [j, wsum] : sums) {
    const Vector y = rotation(j).transpose() * (model - centers_[j]);
    g += rotation(j) * spectrum_.cwiseProduct(wsum).cwiseProduct(y);
  }
  return g / static_cast<double>(samples.size());
}

Partition QuadraticProblem::device_partition() const {
  std::vector<Shard> shards(devices());
  for (std::size_t j = 0; j < devices(); ++j) {
    shards[j].indices.resize(per_device_);
    std::iota(shards[j].indices.begin(), shards[j].indices.end(), j * per_device_);
  }
  return make_partition(std::move(shards));
}

ProblemInstance make_quadratic(const QuadraticOptions& options) {
  auto problem = std::make_shared<QuadraticProblem>(options);
  Partition partition = problem->device_partition();
  return {std::move(problem), std::move(partition)};
}

// ---------------------------------------------------------------------------
// Datasets and partitions.

Dataset make_logistic(std::int64_t d, std::int64_t n, std::int64_t classes,
                      std::uint64_t seed, double separation) {
  if (n < 1) throw ParameterError("logistic: empty dataset (n = 0)");
  if (d < 1) throw ParameterError("logistic: d must be >= 1");
  if (classes < 2) throw ParameterError("logistic: need at least two classes");

  Rng rng(derive_seed(seed, "logistic"));
  std::normal_distribution<double> normal;
  std::vector<Vector> means;
  for (std::int64_t c = 0; c < classes; ++c) {
    Vector u = gaussian_vector(d, rng);
    means.push_back(separation * u / u.norm());
  }

  Dataset data;
  data.classes = static_cast<int>(classes);
  data.features.resize(n, d);
  data.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto label = static_cast<int>(i % classes);
    data.labels[static_cast<std::size_t>(i)] = label;
    for (std::int64_t k = 0; k < d; ++k) {
      data.features(i, k) = means[static_cast<std::size_t>(label)][k] + normal(rng);
    }
  }
  return data;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    const auto first = field.find_first_not_of(" \t\r");
    const auto last = field.find_last_not_of(" \t\r");
    fields.push_back(first == std::string::npos ? std::string()
                                                : field.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

Dataset load_csv_dataset(const std::filesystem::path& path, std::optional<int> classes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line);
    std::vector<double> values(fields.size());
    bool numeric = true;
    for (std::size_t k = 0; k < fields.size() && numeric; ++k) {
      numeric = parse_double(fields[k], values[k]);
    }
    if (!numeric) {
      if (rows.empty() && width == 0) {
        width = fields.size();  // header
        continue;
      }
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(width) + " columns, got " + std::to_string(fields.size()));
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw IoError("dataset '" + path.string() + "' has no rows");
  if (width < 2) throw IoError("dataset needs at least one feature and a label column");

  Dataset data;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(width - 1);
  data.features.resize(n, d);
  data.labels.resize(rows.size());
  int max_label = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < d; ++k) data.features(i, k) = row[static_cast<std::size_t>(k)];
    const double label = row.back();
    if (label < 0 || label != std::floor(label) || label > 1e9) {
      throw IoError("row " + std::to_string(i + 1) + ": label must be a non-negative integer");
    }
    data.labels[static_cast<std::size_t>(i)] = static_cast<int>(label);
    max_label = std::max(max_label, static_cast<int>(label));
  }
  if (classes) {
    if (max_label >= *classes) {
      throw IoError("label " + std::to_string(max_label) + " outside [0, " +
                    std::to_string(*classes) + ")");
    }
    data.classes = *classes;
  } else {
    data.classes = max_label + 1;
  }
  if (data.classes < 2) throw IoError("dataset needs at least two classes");
  return data;
}

Partition partition_homogeneous(const Dataset& data, std::int64_t p, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (p < 1 || static_cast<std::size_t>(p) > n) {
    throw ParameterError("partition: p must lie in [1, n]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "partition-homogeneous"));
  std::shuffle(order.begin(), order.end(), rng);

  const auto devices = static_cast<std::size_t>(p);
  std::vector<Shard> shards(devices);
  std::size_t offset = 0;
  for (std::size_t j = 0; j < devices; ++j) {
    const std::size_t size = n / devices + (j < n % devices ? 1 : 0);
    shards[j].indices.assign(order.begin() + static_cast<std::ptrdiff_t>(offset),
                             order.begin() + static_cast<std::ptrdiff_t>(offset + size));
    std::sort(shards[j].indices.begin(), shards[j].indices.end());
    offset += size;
  }
  return make_partition(std::move(shards));
}

Partition partition_heterogeneous(const Dataset& data, std::int64_t p,
                                  std::int64_t classes_per_device, std::uint64_t seed) {
  const std::size_t n = data.size();
  const auto classes = static_cast<std::int64_t>(data.classes);
  if (p < 1 || static_cast<std::size_t>(p) > n) {
    throw ParameterError("partition: p must lie in [1, n]");
  }
  if (classes_per_device < 1 || classes_per_device > classes) {
    throw ParameterError("partition: classes_per_device must lie in [1, classes]");
  }
  if (p * classes_per_device < classes) {
    throw ParameterError("partition: p * classes_per_device must be >= classes to cover "
                         "every label");
  }

  // Slot s = j * c + r carries label s mod classes.
  std::vector<std::vector<std::size_t>> holders(static_cast<std::size_t>(classes));
  for (std::int64_t j = 0; j < p; ++j) {
    for (std::int64_t r = 0; r < classes_per_device; ++r) {
      holders[static_cast<std::size_t>((j * classes_per_device + r) % classes)].push_back(
          static_cast<std::size_t>(j));
    }
  }

  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < n; ++i) {
    by_label[static_cast<std::size_t>(data.labels[i])].push_back(i);
  }
  Rng rng(derive_seed(seed, "partition-heterogeneous"));
  std::vector<Shard> shards(static_cast<std::size_t>(p));
  for (std::size_t c = 0; c < by_label.size(); ++c) {
    auto& members = by_label[c];
    std::shuffle(members.begin(), members.end(), rng);
    const auto& owners = holders[c];
    const std::size_t k = owners.size();
    std::size_t offset = 0;
    for (std::size_t o = 0; o < k; ++o) {
      const std::size_t size = members.size() / k + (o < members.size() % k ? 1 : 0);
      auto& dst = shards[owners[o]].indices;
      dst.insert(dst.end(), members.begin() + static_cast<std::ptrdiff_t>(offset),
                 members.begin() + static_cast<std::ptrdiff_t>(offset + size));
      offset += size;
    }
  }
  for (Shard& s : shards) {
    if (s.indices.empty()) throw ParameterError("partition: a device received no samples");
    std::sort(s.indices.begin(), s.indices.end());
  }
  return make_partition(std::move(shards));
}

// ---------------------------------------------------------------------------
// Logistic regression.

LogisticProblem::LogisticProblem(std::shared_ptr<const Dataset> data, double reg)
    : data_(std::move(data)), reg_(reg) {
  if (!data_ || data_->size() == 0) throw ParameterError("logistic: empty dataset");
  if (data_->classes < 2) throw ParameterError("logistic: need at least two classes");
  if (!(reg_ >= 0.0)) throw ParameterError("logistic: regularizer must be >= 0");
  double max_sq = 0.0;
  for (Eigen::Index i = 0; i < data_->features.rows(); ++i) {
    max_sq = std::max(max_sq, data_->features.row(i).squaredNorm() + 1.0);
  }
  smoothness_ = 0.5 * max_sq + reg_;
}

std::size_t LogisticProblem::dim() const {
  return static_cast<std::size_t>(data_->classes) * (data_->feature_dim() + 1);
}

Vector LogisticProblem::logits(const Eigen::Map<const Eigen::MatrixXd>& weights,
                               std::size_t sample) const {
  const Eigen::Index d = data_->features.cols();
  const auto row = static_cast<Eigen::Index>(sample);
  return weights.topRows(d).transpose() * data_->features.row(row).transpose() +
         weights.row(d).transpose();
}

double LogisticProblem::loss(const Vector& model,
                             std::span<const std::size_t> samples) const {
  if (samples.empty()) throw ParameterError("loss over no samples");
  if (model.size() != static_cast<Eigen::Index>(dim())) {
    throw DimensionError("logistic: model length");
  }
  const Eigen::Index d = data_->features.cols();
  Eigen::Map<const Eigen::MatrixXd> w(model.data(), d + 1, data_->classes);
  double total = 0.0;
  for (std::size_t s : samples) {
    if (s >= data_->size()) throw IndexError("logistic: sample index out of range");
    const Vector z = logits(w, s);
    const double zmax = z.maxCoeff();
    const double lse = zmax + std::log((z.array() - zmax).exp().sum());
    total += lse - z[data_->labels[s]];
  }
  return total / static_cast<double>(samples.size()) + 0.5 * reg_ * model.squaredNorm();
}

Vector LogisticProblem::mean_grad(const Vector& model,
                                  std::span<const std::size_t> samples) const {
  if (samples.empty()) throw ParameterError("gradient over no samples");
  if (model.size() != static_cast<Eigen::Index>(dim())) {
    throw DimensionError("logistic: model length");
  }
  const Eigen::Index d = data_->features.cols();
  const int classes = data_->classes;
  Eigen::Map<const Eigen::MatrixXd> w(model.data(), d + 1, classes);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(d + 1, classes);
  for (std::size_t s : samples) {
    if (s >= data_->size()) throw IndexError("logistic: sample index out of range");
    Vector prob = logits(w, s);
    prob = (prob.array() - prob.maxCoeff()).exp();
    prob /= prob.sum();
    prob[data_->labels[s]] -= 1.0;
    const auto row = static_cast<Eigen::Index>(s);
    g.topRows(d).noalias() += data_->features.row(row).transpose() * prob.transpose();
    g.row(d) += prob.transpose();
  }
  Vector out = Eigen::Map<Vector>(g.data(), g.size()) / static_cast<double>(samples.size());
  out += reg_ * model;
  return out;
}

std::optional<double> LogisticProblem::accuracy(const Vector& model,
                                                std::span<const std::size_t> samples) const {
  if (samples.empty()) return std::nullopt;
  const Eigen::Index d = data_->features.cols();
  Eigen::Map<const Eigen::MatrixXd> w(model.data(), d + 1, data_->classes);
  std::size_t correct = 0;
  for (std::size_t s : samples) {
    Eigen::Index best = 0;
    logits(w, s).maxCoeff(&best);
    if (best == data_->labels[s]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace fedsketch
