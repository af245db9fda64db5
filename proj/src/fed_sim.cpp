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

#include "fedsketch/fed_sim.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "fedsketch/errors.hpp"

namespace fedsketch {

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kFedSketch:
      return "FEDSKETCH";
    case Algorithm::kFedSketchGate:
      return "FEDSKETCHGATE";
    case Algorithm::kFedSgd:
      return "FEDSGD";
  }
  return "?";
}

std::string_view to_string(Variant variant) {
  return variant == Variant::kPrivix ? "PRIVIX" : "HEAPRIX";
}

Algorithm parse_algorithm(std::string_view text) {
  if (text == "FEDSKETCH" || text == "fedsketch") return Algorithm::kFedSketch;
  if (text == "FEDSKETCHGATE" || text == "fedsketchgate") return Algorithm::kFedSketchGate;
  if (text == "FEDSGD" || text == "fedsgd") return Algorithm::kFedSgd;
  throw ParameterError("unknown algorithm '" + std::string(text) + "'");
}

Variant parse_variant(std::string_view text) {
  if (text == "PRIVIX" || text == "privix") return Variant::kPrivix;
  if (text == "HEAPRIX" || text == "heaprix") return Variant::kHeaprix;
  throw ParameterError("unknown variant '" + std::string(text) + "'");
}

void FedConfig::validate(const Problem& problem, const Partition& partition) const {
  if (p < 1) throw ParameterError("fed.p must be >= 1");
  if (static_cast<std::size_t>(p) != partition.devices()) {
    throw ParameterError("fed.p = " + std::to_string(p) + " but the partition has " +
                         std::to_string(partition.devices()) + " shards");
  }
  if (k < 1 || k > p) throw ParameterError("fed.k must lie in [1, p]");
  if (algorithm == Algorithm::kFedSketchGate && k != p) {
    throw ParameterError("fed.k must equal fed.p for FEDSKETCHGATE");
  }
  if (rounds < 0) throw ParameterError("fed.rounds must be >= 0");
  if (tau < 1) throw ParameterError("fed.tau must be >= 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ParameterError("fed.eta must be > 0");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ParameterError("fed.gamma must be > 0");
  if (batch < 0) throw ParameterError("fed.batch must be >= 0");
  for (const Shard& shard : partition.shards) {
    if (static_cast<std::size_t>(batch) > shard.size()) {
      throw ParameterError("fed.batch exceeds the smallest shard");
    }
  }
  if (uses_sketch()) {
    CompressorSpec spec = sketch;
    spec.kind = variant == Variant::kHeaprix ? CompressorKind::kHeaprix : CompressorKind::kPrivix;
    spec.validate(static_cast<std::int64_t>(problem.dim()));
  }
}

std::int64_t FedConfig::message_bytes(std::size_t d) const {
  constexpr std::int64_t kBytesPerValue = 8;
  if (!uses_sketch()) return static_cast<std::int64_t>(d) * kBytesPerValue;
  return sketch.rows * sketch.buckets * kBytesPerValue;
}

std::int64_t FedConfig::exchanges() const {
  return uses_sketch() && variant == Variant::kHeaprix ? 2 : 1;
}

std::vector<std::size_t> sample_devices(std::int64_t p, std::int64_t k,
                                        std::span<const double> q, Rng& rng) {
  if (p < 1 || k < 1) throw ParameterError("sample_devices: p and k must be >= 1");
  if (q.size() != static_cast<std::size_t>(p)) {
    throw ParameterError("sample_devices: need one weight per device");
  }
  double total = 0.0;
  for (double w : q) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ParameterError("sample_devices: weights must be non-negative");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ParameterError("sample_devices: weights must sum to 1");

  std::discrete_distribution<std::size_t> pick(q.begin(), q.end());
  std::vector<std::size_t> draws(static_cast<std::size_t>(k));
  for (std::size_t& d : draws) d = pick(rng);
  return draws;
}

LocalUpdate local_sgd(const Vector& model, const Problem& problem, const Shard& shard,
                      std::int64_t tau, double eta, std::int64_t batch,
                      const Vector* correction, Rng& rng) {
  if (tau < 1) throw ParameterError("local_sgd: tau must be >= 1");
  if (correction != nullptr && correction->size() != model.size()) {
    throw DimensionError("local_sgd: correction length differs from the model");
  }
  Vector x = model;
  for (std::int64_t step = 0; step < tau; ++step) {
    Vector g = batch == 0 ? full_grad(problem, shard, x)
                          : stochastic_grad(problem, shard, x, batch, rng);
    if (correction != nullptr) g -= *correction;
    x -= eta * g;
  }
  Vector delta = model - x;
  return {std::move(x), std::move(delta)};
}

SketchTable sum_tables(std::span<const SketchTable* const> tables) {
  if (tables.empty()) throw ParameterError("sum_tables: nothing to sum");
  if (tables.size() == 1) return *tables.front();
  const std::size_t half = tables.size() / 2;
  return table_add(sum_tables(tables.first(half)), sum_tables(tables.subspan(half)));
}

namespace {

Vector sum_vectors(std::span<const Vector* const> vectors) {
  if (vectors.size() == 1) return *vectors.front();
  const std::size_t half = vectors.size() / 2;
  return sum_vectors(vectors.first(half)) + sum_vectors(vectors.subspan(half));
}

template <typename T>
std::vector<const T*> expand(std::span<const T> items, std::span<const std::int64_t> counts) {
  std::vector<const T*> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::int64_t c = 0; c < counts[i]; ++c) out.push_back(&items[i]);
  }
  return out;
}

}  // namespace

Simulator::Simulator(FedConfig config, std::shared_ptr<const Problem> problem,
                     Partition partition, std::optional<Vector> initial_model)
    : config_(std::move(config)),
      problem_(std::move(problem)),
      partition_(std::move(partition)),
      server_rng_(derive_seed(config_.master_seed, "server")) {
  if (!problem_) throw ParameterError("simulator needs a problem");
  partition_.validate(problem_->num_samples());
  config_.validate(*problem_, partition_);

  const auto d = static_cast<Eigen::Index>(problem_->dim());
  model_ = initial_model ? *initial_model : Vector::Zero(d);
  if (model_.size() != d) throw DimensionError("initial model length differs from d");
  last_phi_ = Vector::Zero(d);

  for (std::size_t j = 0; j < partition_.devices(); ++j) {
    const std::uint64_t stream = config_.synchronized_batches ? 0 : j;
    devices_.push_back(DeviceState{j, Vector::Zero(d),
                                   Rng(derive_seed(config_.master_seed, "device", stream)),
                                   std::nullopt, Vector()});
  }
}

RoundTrace Simulator::step() {
  if (config_.algorithm == Algorithm::kFedSketchGate) return fedsketchgate_round();
  return fedsketch_round();
}

std::vector<Vector> Simulator::local_round(std::span<const Contribution> contributions,
                                           bool use_correction) {
  std::vector<Vector> deltas;
  deltas.reserve(contributions.size());
  for (const Contribution& c : contributions) {
    DeviceState& device = devices_[c.device];
    LocalUpdate update =
        local_sgd(model_, *problem_, partition_.shards[c.device], config_.tau, config_.eta,
                  config_.batch, use_correction ? &device.correction : nullptr, device.rng);
    deltas.push_back(std::move(update.delta));
  }
  return deltas;
}

void Simulator::aggregate(std::span<const Contribution> contributions,
                          std::span<const Vector> deltas,
                          std::span<const SketchTable> sketches, const HashFamily* family) {
  std::vector<std::int64_t> counts;
  for (const Contribution& c : contributions) counts.push_back(c.multiplicity);
  const double draws =
      static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::int64_t{0}));
  const Vector mean_delta = sum_vectors(expand(deltas, std::span<const std::int64_t>(counts))) / draws;

  if (!config_.uses_sketch()) {
    last_phi_ = mean_delta;
    model_ -= config_.gamma * last_phi_;
    return;
  }

  const auto uploads = expand(sketches, std::span<const std::int64_t>(counts));
  SketchTable average = table_scale(sum_tables(uploads), 1.0 / draws);

  if (config_.debug_checks) {
    const SketchTable direct = compress(mean_delta, *family);
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < direct.values().size(); ++i) {
      diff = std::max(diff, std::abs(direct.values()[i] - average.values()[i]));
      scale = std::max(scale, std::abs(direct.values()[i]));
    }
    if (diff > 1e-9 * (1.0 + scale)) {
      throw std::logic_error("server average differs from the sketch of the mean delta");
    }
  }

  if (config_.variant == Variant::kPrivix) {
    last_phi_ = query_all(average, *family);
    last_heavy_average_.reset();
  } else {
    const ValueMode mode = config_.sketch.value_mode;
    const EstimateVector heavy = heavymix(average, *family, config_.sketch.heavy_budget, mode,
                                          mode == ValueMode::kOracle ? &mean_delta : nullptr);
    // Second exchange: every contributing device sketches the same HEAVYMIX
    // reconstruction and the server averages those uploads.
    std::vector<SketchTable> heavy_sketches(contributions.size(),
                                            compress(heavy.values, *family));
    SketchTable heavy_average = table_scale(
        sum_tables(expand(std::span<const SketchTable>(heavy_sketches),
                          std::span<const std::int64_t>(counts))),
        1.0 / draws);
    last_phi_ = heavy.values + query_all(table_sub(average, heavy_average), *family);
    last_heavy_average_ = std::move(heavy_average);
  }
  last_average_ = std::move(average);
  model_ -= config_.gamma * last_phi_;
}

RoundTrace Simulator::finish(std::int64_t messages, double seconds) {
  ++round_;
  RoundTrace trace = snapshot();
  const std::int64_t bytes =
      messages * config_.exchanges() * config_.message_bytes(problem_->dim());
  trace.bytes_uplink = bytes;
  trace.bytes_downlink = bytes;
  trace.wall_time = seconds;
  return trace;
}

RoundTrace Simulator::fedsketch_round() {
  const auto start = std::chrono::steady_clock::now();
  const auto r = static_cast<std::uint64_t>(round_);

  const auto draws =
      sample_devices(config_.p, config_.k, partition_.weights, server_rng_);
  std::vector<std::int64_t> multiplicity(partition_.devices(), 0);
  for (std::size_t j : draws) ++multiplicity[j];
  std::vector<Contribution> contributions;
  for (std::size_t j = 0; j < multiplicity.size(); ++j) {
    if (multiplicity[j] > 0) contributions.push_back({j, multiplicity[j]});
  }

  const std::vector<Vector> deltas = local_round(contributions, false);
  std::vector<SketchTable> sketches;
  if (config_.uses_sketch()) {
    const HashFamily family =
        derive_family(config_.master_seed, r, config_.sketch.rows, config_.sketch.buckets,
                      static_cast<std::int64_t>(problem_->dim()));
    for (const Vector& delta : deltas) sketches.push_back(compress(delta, family));
    aggregate(contributions, deltas, sketches, &family);
    last_family_ = family;
  } else {
    aggregate(contributions, deltas, sketches, nullptr);
  }

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return finish(static_cast<std::int64_t>(contributions.size()), seconds);
}

Vector Simulator::device_heaprix(const DeviceState& device, const HashFamily& family) const {
  if (config_.sketch.value_mode == ValueMode::kOracle) {
    return heaprix_device(device.last_delta, family, config_.sketch.heavy_budget).values;
  }
  const SketchTable& own = *device.last_sketch;
  const EstimateVector heavy =
      heavymix(own, family, config_.sketch.heavy_budget, ValueMode::kEstimate);
  return heavy.values + query_all(table_sub(own, compress(heavy.values, family)), family);
}

RoundTrace Simulator::fedsketchgate_round() {
  if (config_.algorithm != Algorithm::kFedSketchGate) {
    throw ParameterError("fedsketchgate_round needs algorithm FEDSKETCHGATE");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto r = static_cast<std::uint64_t>(round_);

  // Gradient tracking from the previous round's uploads; round 0 keeps c = 0.
  if (last_family_) {
    const double inv_tau = 1.0 / static_cast<double>(config_.tau);
    for (DeviceState& device : devices_) {
      const Vector own = config_.variant == Variant::kPrivix
                             ? query_all(*device.last_sketch, *last_family_)
                             : device_heaprix(device, *last_family_);
      device.correction -= inv_tau * (last_phi_ - own);
    }
  }

  std::vector<Contribution> contributions;
  for (std::size_t j = 0; j < devices_.size(); ++j) contributions.push_back({j, 1});
  std::vector<Vector> deltas = local_round(contributions, true);

  const HashFamily family =
      derive_family(config_.master_seed, r, config_.sketch.rows, config_.sketch.buckets,
                    static_cast<std::int64_t>(problem_->dim()));
  std::vector<SketchTable> sketches;
  for (const Vector& delta : deltas) sketches.push_back(compress(delta, family));
  aggregate(contributions, deltas, sketches, &family);
  last_family_ = family;
  for (std::size_t j = 0; j < devices_.size(); ++j) {
    devices_[j].last_sketch = sketches[j];
    devices_[j].last_delta = std::move(deltas[j]);
  }

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return finish(static_cast<std::int64_t>(contributions.size()), seconds);
}

RoundTrace Simulator::snapshot() const {
  RoundTrace trace;
  trace.round = round_;
  trace.model_norm = model_.norm();
  trace.loss = objective(*problem_, partition_, model_);
  trace.grad_norm = objective_grad(*problem_, partition_, model_).norm();
  trace.accuracy = objective_accuracy(*problem_, partition_, model_);
  return trace;
}

std::vector<RoundTrace> run(const FedConfig& config, const ProblemInstance& instance,
                            std::optional<Vector> initial_model) {
  Simulator sim(config, instance.problem, instance.partition, std::move(initial_model));
  std::vector<RoundTrace> traces;
  traces.reserve(static_cast<std::size_t>(config.rounds));
  for (std::int64_t r = 0; r < config.rounds; ++r) traces.push_back(sim.step());
  return traces;
}

}  // namespace fedsketch
