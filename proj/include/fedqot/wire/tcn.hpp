#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "fedqot/fedavg.hpp"
#include "fedqot/wire/stream.hpp"

namespace fedqot::wire {

struct TcnConfig {
  ModelSpec model_spec;
  Hyperparams hyperparams;
  uint32_t expected_ecns = 1;  // K: eligible registrations before training starts
  uint64_t schema_hash = 0;
  uint64_t min_samples = 100;
  std::chrono::milliseconds round_deadline{60000};
  uint64_t init_seed = 0;
  std::optional<Dataset> eval_set;  // coordinator-side held-out data
};

struct TcnOutcome {
  bool success = false;
  std::string error;
  ParameterVector final_params;
  std::vector<RoundMetrics> history;  // mean_local_loss is NaN server-side
  std::optional<double> final_accuracy;
};

// Runs the coordinator: registers K eligible edge nodes (schema hash equality
// and n_samples >= min_samples), distributes the training configuration, then
// per round broadcasts the global model and collects local updates until the
// deadline. Stragglers are dropped with weights renormalized over received
// updates; a round that receives nothing is retried once, then training
// aborts. Ends by broadcasting DONE with the final held-out accuracy.
TcnOutcome tcn_serve(const TcnConfig& config, StreamAcceptor& acceptor);

}  // namespace fedqot::wire
