#include "fedqot/wire/ecn.hpp"

#include "fedqot/log.hpp"

namespace fedqot::wire {

namespace {

Message expect_message(ByteStream& stream) {
  auto msg = read_message(stream);
  if (!msg) throw IoError("coordinator closed the connection");
  return std::move(*msg);
}

}  // namespace

EcnResult ecn_client(const StreamFactory& connect, const Dataset& local_data,
                     const EcnConfig& cfg) {
  if (local_data.size() == 0) throw UsageError("local dataset is empty");
  if (cfg.ecn_id.empty()) throw UsageError("ecn_id must not be empty");

  EcnResult result;
  int attempts = 0;
  while (attempts < 2) {
    ++attempts;
    try {
      std::unique_ptr<ByteStream> stream = connect();

      Hello hello;
      hello.ecn_id = cfg.ecn_id;
      hello.n_samples = local_data.size();
      hello.schema_hash = cfg.schema_hash;
      hello.protocol_version = kProtocolVersion;
      write_message(*stream, hello);

      Message reply = expect_message(*stream);
      const auto* eligible = std::get_if<Eligible>(&reply);
      if (!eligible) throw ProtocolError("expected ELIGIBLE after HELLO");
      if (!eligible->accepted) {
        result.status = EcnResult::Status::kRejected;
        result.detail = eligible->reason;
        log_warn("'" + cfg.ecn_id + "' rejected: " + eligible->reason);
        return result;
      }

      reply = expect_message(*stream);
      const auto* config = std::get_if<TrainConfig>(&reply);
      if (!config) throw ProtocolError("expected TRAIN_CONFIG after ELIGIBLE");
      const ModelSpec spec = config->model_spec;
      const Hyperparams hp = config->hyperparams;
      if (spec.input_dim != local_data.features.cols) {
        result.status = EcnResult::Status::kFailed;
        result.detail = "model input width does not match local data";
        return result;
      }

      for (;;) {
        Message msg = expect_message(*stream);
        if (const auto* gm = std::get_if<GlobalModel>(&msg)) {
          const ParameterVector global =
              deserialize_params(gm->param_blob, spec);
          const ParameterVector update =
              ecn_update(local_data, global, hp, gm->round_index);
          LocalUpdate lu;
          lu.round_index = gm->round_index;
          lu.n_samples = local_data.size();
          lu.param_blob = serialize_params(update);
          write_message(*stream, lu);
          ++result.rounds_participated;
        } else if (const auto* done = std::get_if<Done>(&msg)) {
          result.status = EcnResult::Status::kDone;
          result.final_accuracy = done->final_accuracy;
          return result;
        } else if (const auto* err = std::get_if<ErrorMsg>(&msg)) {
          result.status = EcnResult::Status::kFailed;
          result.detail = err->code + ": " + err->detail;
          return result;
        } else {
          throw ProtocolError("unexpected message from the coordinator");
        }
      }
    } catch (const IoError& e) {
      if (attempts < 2) {
        log_warn("'" + cfg.ecn_id + "' lost the connection (" + e.what() +
                 "); reconnecting");
        continue;
      }
      result.status = EcnResult::Status::kFailed;
      result.detail = e.what();
      return result;
    }
  }
  return result;  // unreachable
}

}  // namespace fedqot::wire
