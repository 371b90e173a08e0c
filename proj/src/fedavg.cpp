#include "fedqot/fedavg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "fedqot/log.hpp"
#include "fedqot/rng.hpp"

namespace fedqot {

void Hyperparams::validate() const {
  if (!(eta > 0.0)) throw UsageError("eta must be > 0 for a training run");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (rounds < 1) throw UsageError("rounds must be >= 1");
}

namespace {

Batch gather_batch(const Dataset& data, const std::vector<size_t>& order,
                   size_t begin, size_t end) {
  Batch b;
  b.features = Matrix(end - begin, data.features.cols);
  b.labels.reserve(end - begin);
  for (size_t i = begin; i < end; ++i) {
    const double* src = data.features.row(order[i]);
    std::copy(src, src + data.features.cols, b.features.row(i - begin));
    b.labels.push_back(data.labels[order[i]]);
  }
  return b;
}

// One epoch of mini-batch SGD over a fresh shuffle of the data.
void run_epoch(ParameterVector& params, const Dataset& data,
               const Hyperparams& hp, uint64_t epoch_seed) {
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  SplitMix64 rng(epoch_seed);
  fisher_yates_shuffle(order, rng);
  for (size_t begin = 0; begin < order.size(); begin += hp.batch_size) {
    const size_t end = std::min(begin + size_t(hp.batch_size), order.size());
    const Batch b = gather_batch(data, order, begin, end);
    LossGrad lg = loss_and_grad(params, b);
    params = sgd_step(params, lg.grad, hp.eta);
  }
}

}  // namespace

ParameterVector ecn_update(const Dataset& local_data,
                           const ParameterVector& global_params,
                           const Hyperparams& hp, uint32_t round_index) {
  if (local_data.size() == 0) throw UsageError("local dataset is empty");
  if (local_data.features.cols != global_params.spec.input_dim) {
    throw SchemaError("local dataset width does not match the model spec");
  }
  if (hp.eta < 0.0) throw UsageError("eta must be >= 0");
  if (hp.batch_size < 1) throw UsageError("batch_size must be >= 1");

  ParameterVector params = global_params;
  for (uint32_t epoch = 1; epoch <= hp.local_epochs; ++epoch) {
    run_epoch(params, local_data, hp,
              shuffle_seed_for(hp.shuffle_seed, round_index, epoch));
  }
  return params;
}

ParameterVector aggregate(const std::vector<EcnUpdate>& updates) {
  if (updates.empty()) throw AggregationError("no updates to aggregate");

  std::vector<const EcnUpdate*> ordered;
  ordered.reserve(updates.size());
  for (const auto& u : updates) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(),
            [](const EcnUpdate* a, const EcnUpdate* b) {
              return a->ecn_id < b->ecn_id;
            });

  const ModelSpec& spec = ordered.front()->params.spec;
  uint64_t total = 0;
  for (const auto* u : ordered) {
    if (u->params.spec != spec) {
      throw SchemaError("updates disagree on the model spec");
    }
    if (u->n_samples == 0) throw AggregationError("update with n_samples = 0");
    total += u->n_samples;
  }

  ParameterVector out;
  out.spec = spec;
  out.values.assign(spec.param_count(), 0.0);
  for (const auto* u : ordered) {
    const double w = double(u->n_samples) / double(total);
    const auto& v = u->params.values;
    for (size_t i = 0; i < out.values.size(); ++i) {
      out.values[i] += w * v[i];
    }
  }
  return out;
}

ParameterVector close_round(const RoundState& state,
                            StragglerWeighting weighting) {
  (void)weighting;  // single policy: renormalize over received
  if (state.received.empty()) {
    throw AggregationError("round " + std::to_string(state.round_index) +
                           " closed with no updates received");
  }
  for (const auto& id : state.expected) {
    if (!state.received.count(id)) {
      log_warn("round " + std::to_string(state.round_index) +
               ": dropping straggler '" + id + "'");
    }
  }
  std::vector<EcnUpdate> updates;
  updates.reserve(state.received.size());
  for (const auto& [id, u] : state.received) updates.push_back(u);
  return aggregate(updates);
}

TrainingResult run_training(const std::vector<Dataset>& partitions,
                            const ModelSpec& spec, const Hyperparams& hp,
                            uint64_t init_seed, const Dataset* eval_set) {
  hp.validate();
  spec.validate();
  if (partitions.empty()) throw UsageError("no partitions given");
  for (const auto& p : partitions) {
    if (p.size() == 0) throw UsageError("a partition is empty");
    if (p.features.cols != spec.input_dim) {
      throw SchemaError("partition width does not match the model spec");
    }
  }

  TrainingResult result;
  ParameterVector global = init_params(spec, init_seed);
  uint64_t total = 0;
  for (const auto& p : partitions) total += p.size();

  const Batch eval_batch = eval_set ? eval_set->as_batch() : Batch{};

  for (uint32_t t = 1; t <= hp.rounds; ++t) {
    std::vector<EcnUpdate> updates(partitions.size());
    auto train_one = [&](size_t k) {
      updates[k].ecn_id = "ecn-" + std::to_string(k);
      updates[k].params = ecn_update(partitions[k], global, hp, t);
      updates[k].n_samples = partitions[k].size();
    };
    if (partitions.size() == 1) {
      train_one(0);
    } else {
      std::vector<std::thread> workers;
      workers.reserve(partitions.size());
      for (size_t k = 0; k < partitions.size(); ++k) {
        workers.emplace_back(train_one, k);
      }
      for (auto& w : workers) w.join();
    }
    global = aggregate(updates);

    RoundMetrics m;
    m.round = t;
    // Pooled mean loss of the new global model: n_k/n-weighted local means.
    double loss = 0.0;
    for (const auto& p : partitions) {
      loss += (double(p.size()) / double(total)) *
              compute_loss(global, p.as_batch());
    }
    m.mean_local_loss = loss;
    m.eval_accuracy = eval_set ? evaluate_accuracy(global, eval_batch)
                               : std::numeric_limits<double>::quiet_NaN();
    result.history.push_back(m);
  }
  result.final_params = std::move(global);
  return result;
}

ParameterVector centralized_train(const Dataset& pooled, const ModelSpec& spec,
                                  const Hyperparams& hp, uint64_t init_seed) {
  hp.validate();
  spec.validate();
  if (pooled.size() == 0) throw UsageError("pooled dataset is empty");
  if (pooled.features.cols != spec.input_dim) {
    throw SchemaError("dataset width does not match the model spec");
  }

  ParameterVector params = init_params(spec, init_seed);
  for (uint32_t t = 1; t <= hp.rounds; ++t) {
    for (uint32_t epoch = 1; epoch <= hp.local_epochs; ++epoch) {
      run_epoch(params, pooled, hp,
                shuffle_seed_for(hp.shuffle_seed, t, epoch));
    }
  }
  return params;
}

void write_history_csv(const std::vector<RoundMetrics>& history,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "round,mean_local_loss,eval_accuracy\n";
  char buf[128];
  for (const auto& m : history) {
    std::snprintf(buf, sizeof(buf), "%u,%.17g,%.17g\n", m.round,
                  m.mean_local_loss, m.eval_accuracy);
    out << buf;
  }
  if (!out.good()) throw IoError("write to '" + path + "' failed");
}

}  // namespace fedqot
