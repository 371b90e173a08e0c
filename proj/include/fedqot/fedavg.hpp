#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fedqot/nn.hpp"
#include "fedqot/qot_data.hpp"

namespace fedqot {

struct Hyperparams {
  double eta = 0.01;          // learning rate
  uint32_t local_epochs = 2;  // E: full local passes per round
  uint32_t batch_size = 64;   // last batch of an epoch may be smaller
  uint32_t rounds = 30;
  uint64_t shuffle_seed = 0;

  bool operator==(const Hyperparams&) const = default;

  // Training-run validity: eta > 0, batch_size >= 1, rounds >= 1.
  void validate() const;
};

struct EcnDescriptor {
  std::string ecn_id;
  uint64_t n_samples = 0;
  uint64_t schema_hash = 0;
};

// One edge node's reported model for a round.
struct EcnUpdate {
  std::string ecn_id;
  ParameterVector params;
  uint64_t n_samples = 0;
};

// Coordinator-side bookkeeping for one aggregation round.
struct RoundState {
  uint32_t round_index = 1;
  ParameterVector global_params;
  std::set<std::string> expected;
  std::map<std::string, EcnUpdate> received;  // keyed by ecn_id
  std::chrono::steady_clock::time_point deadline;
};

enum class StragglerWeighting { kRenormalizeReceived };

// Shuffle stream seed for (round, epoch); rounds and epochs are 1-based.
inline uint64_t shuffle_seed_for(uint64_t shuffle_seed, uint32_t round_index,
                                 uint32_t epoch) {
  return shuffle_seed ^ (uint64_t(round_index) * 0x9E3779B97F4A7C15ULL) ^
         uint64_t(epoch);
}

// Local training pass: copies the global parameters and runs local_epochs
// epochs of mini-batch SGD over a per-epoch Fisher-Yates shuffle of the local
// data. The global parameters are not mutated.
ParameterVector ecn_update(const Dataset& local_data,
                           const ParameterVector& global_params,
                           const Hyperparams& hp, uint32_t round_index);

// Sample-count-weighted average of the updates. Summation runs in ascending
// ecn_id order regardless of input order, so the result is deterministic
// under permutation.
ParameterVector aggregate(const std::vector<EcnUpdate>& updates);

// Aggregates over the updates actually received, weights renormalized to
// n_k / sum over received. Dropped ecn_ids are logged. Throws
// AggregationError when nothing was received.
ParameterVector close_round(
    const RoundState& state,
    StragglerWeighting weighting = StragglerWeighting::kRenormalizeReceived);

struct RoundMetrics {
  uint32_t round = 0;
  double mean_local_loss = 0.0;  // pooled mean loss of the new global model
  double eval_accuracy = 0.0;    // NaN when no eval set was provided
};

struct TrainingResult {
  ParameterVector final_params;
  std::vector<RoundMetrics> history;
};

// In-process federated loop: per round, every partition runs ecn_update
// against the current global model (partition k participates as "ecn-k"),
// and the results are aggregated with n_k/n weights. Partition updates may
// run on separate threads; results are identical to sequential execution.
TrainingResult run_training(const std::vector<Dataset>& partitions,
                            const ModelSpec& spec, const Hyperparams& hp,
                            uint64_t init_seed,
                            const Dataset* eval_set = nullptr);

// Centralized baseline: plain mini-batch SGD over the pooled data for
// rounds x local_epochs epochs with the same shuffle discipline as the
// federated loop, so a single-partition federated run reproduces it exactly.
ParameterVector centralized_train(const Dataset& pooled, const ModelSpec& spec,
                                  const Hyperparams& hp, uint64_t init_seed);

void write_history_csv(const std::vector<RoundMetrics>& history,
                       const std::string& path);

}  // namespace fedqot
