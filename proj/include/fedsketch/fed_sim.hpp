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

#ifndef FEDSKETCH_FED_SIM_HPP_
#define FEDSKETCH_FED_SIM_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedsketch/compressors.hpp"
#include "fedsketch/problems.hpp"
#include "fedsketch/seeding.hpp"
#include "fedsketch/sketch.hpp"

namespace fedsketch {

enum class Algorithm { kFedSketch, kFedSketchGate, kFedSgd };
enum class Variant { kPrivix, kHeaprix };

std::string_view to_string(Algorithm algorithm);
std::string_view to_string(Variant variant);
Algorithm parse_algorithm(std::string_view text);
Variant parse_variant(std::string_view text);

struct FedConfig {
  std::int64_t p = 1;       // devices
  std::int64_t k = 1;       // draws per round (FedSKETCH, FedSGD)
  std::int64_t rounds = 1;  // R
  std::int64_t tau = 1;     // local steps
  double eta = 0.1;         // local learning rate
  double gamma = 1.0;       // global learning rate
  std::int64_t batch = 0;   // 0 = full pass over the shard
  Algorithm algorithm = Algorithm::kFedSketch;
  Variant variant = Variant::kPrivix;
  // Geometry (m, t, heavy_budget) and HEAVYMIX value source; kind is unused.
  CompressorSpec sketch{CompressorKind::kPrivix, 1, 1, 1, ValueMode::kEstimate};
  std::uint64_t master_seed = 0;
  // Every device draws mini-batch positions from the same stream.
  bool synchronized_batches = false;
  // Re-checks sketch linearity of the server average every round.
  bool debug_checks = false;

  // Throws ParameterError naming the offending field.
  void validate(const Problem& problem, const Partition& partition) const;

  bool uses_sketch() const { return algorithm != Algorithm::kFedSgd; }
  // Payload of one message in bytes (sketch table or dense vector of doubles).
  std::int64_t message_bytes(std::size_t d) const;
  // Exchanges per round: two for HEAPRIX (S then S-tilde), else one.
  std::int64_t exchanges() const;

  friend bool operator==(const FedConfig&, const FedConfig&) = default;
};

struct RoundTrace {
  std::int64_t round = 0;
  double model_norm = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::optional<double> accuracy;
  std::int64_t bytes_uplink = 0;
  std::int64_t bytes_downlink = 0;
  double wall_time = 0.0;  // seconds spent in the round
};

// k independent draws of device ids with probabilities q (with replacement),
// in draw order.
std::vector<std::size_t> sample_devices(std::int64_t p, std::int64_t k,
                                        std::span<const double> q, Rng& rng);

struct LocalUpdate {
  Vector model;  // x^(tau)
  Vector delta;  // x^(0) - x^(tau)
};

// tau steps of x <- x - eta * (g - c) from `model`; c = 0 without correction.
// batch = 0 uses the full shard gradient each step.
LocalUpdate local_sgd(const Vector& model, const Problem& problem, const Shard& shard,
                      std::int64_t tau, double eta, std::int64_t batch,
                      const Vector* correction, Rng& rng);

struct DeviceState {
  std::size_t id = 0;
  Vector correction;  // c_j, FedSKETCHGATE only
  Rng rng;
  // Previous round's upload, kept for the gradient-tracking update.
  std::optional<SketchTable> last_sketch;
  Vector last_delta;
};

// Single-process simulation of FedSKETCH / FedSKETCHGATE / FedSGD.
//
// Each call to step() runs one communication round r: devices start from the
// current global model, run local SGD, upload sketches of their deltas under
// the round's shared family derive_family(master_seed, r, t, m, d), the
// server averages them, and the global model moves by -gamma * Phi where Phi
// is decoded from this round's averaged sketches.
class Simulator {
 public:
  Simulator(FedConfig config, std::shared_ptr<const Problem> problem, Partition partition,
            std::optional<Vector> initial_model = std::nullopt);

  // Runs the next round with the configured algorithm.
  RoundTrace step();
  RoundTrace fedsketch_round();
  RoundTrace fedsketchgate_round();

  // Metrics of the current global model; bytes are zero.
  RoundTrace snapshot() const;

  const Vector& model() const { return model_; }
  std::int64_t rounds_done() const { return round_; }
  const std::vector<DeviceState>& devices() const { return devices_; }
  const FedConfig& config() const { return config_; }
  const Problem& problem() const { return *problem_; }
  const Partition& partition() const { return partition_; }

  // The last server average S^(r) and, for HEAPRIX, S-tilde^(r).
  const std::optional<SketchTable>& last_average() const { return last_average_; }
  const std::optional<SketchTable>& last_heavy_average() const { return last_heavy_average_; }
  // The update direction Phi applied in the last round.
  const Vector& last_direction() const { return last_phi_; }

 private:
  struct Contribution {
    std::size_t device;
    std::int64_t multiplicity;
  };

  // Local SGD on each contributing device; returns their deltas.
  std::vector<Vector> local_round(std::span<const Contribution> contributions,
                                  bool use_correction);
  // Averages the uploads (weighted by multiplicity), decodes Phi and moves
  // the global model. FedSGD passes no sketches and no family.
  void aggregate(std::span<const Contribution> contributions,
                 std::span<const Vector> deltas, std::span<const SketchTable> sketches,
                 const HashFamily* family);
  RoundTrace finish(std::int64_t messages, double seconds);

  // HEAPRIX decode of a single device's previous upload.
  Vector device_heaprix(const DeviceState& device, const HashFamily& family) const;

  FedConfig config_;
  std::shared_ptr<const Problem> problem_;
  Partition partition_;
  Vector model_;
  std::int64_t round_ = 0;
  Rng server_rng_;
  std::vector<DeviceState> devices_;

  std::optional<SketchTable> last_average_;
  std::optional<SketchTable> last_heavy_average_;
  std::optional<HashFamily> last_family_;
  Vector last_phi_;
};

// Runs config.rounds rounds; one trace per round (the metrics after it).
std::vector<RoundTrace> run(const FedConfig& config, const ProblemInstance& instance,
                            std::optional<Vector> initial_model = std::nullopt);

// Pairwise (tree) sum of tables in the given order.
SketchTable sum_tables(std::span<const SketchTable* const> tables);

}  // namespace fedsketch

#endif  // FEDSKETCH_FED_SIM_HPP_
