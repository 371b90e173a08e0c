#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "fedqot/fedavg.hpp"
#include "fedqot/wire/stream.hpp"

namespace fedqot::wire {

struct EcnConfig {
  std::string ecn_id;
  uint64_t schema_hash = 0;
};

struct EcnResult {
  enum class Status { kDone, kRejected, kFailed } status = Status::kFailed;
  std::optional<double> final_accuracy;  // from the coordinator's DONE
  uint32_t rounds_participated = 0;
  std::string detail;
};

// Opens a fresh connection; called again for the single reconnect attempt.
using StreamFactory = std::function<std::unique_ptr<ByteStream>()>;

// Edge node loop: HELLO, then on ELIGIBLE + TRAIN_CONFIG repeatedly answer
// GLOBAL_MODEL(t) with a locally trained LOCAL_UPDATE(t). Local raw data
// never leaves the process; only parameter blobs and the sample count are
// transmitted. A lost connection mid-training is retried once.
EcnResult ecn_client(const StreamFactory& connect, const Dataset& local_data,
                     const EcnConfig& cfg);

}  // namespace fedqot::wire
