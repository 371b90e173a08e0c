#include "fedqot/wire/frames.hpp"

#include <cstdio>
#include <cstring>

#include <json.hpp>

namespace fedqot::wire {

namespace {

using nlohmann::json;

std::string hash_to_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

uint64_t hash_from_hex(const std::string& s) {
  if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos) {
    throw FormatError("schema_hash must be 16 lowercase hex digits");
  }
  return std::stoull(s, nullptr, 16);
}

json parse_control(const uint8_t* payload, size_t len) {
  try {
    return json::parse(payload, payload + len);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("control payload: ") + e.what());
  }
}

template <typename T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) {
    throw FormatError(std::string("control payload missing '") + name + "'");
  }
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("control payload field '") + name +
                      "': " + e.what());
  }
}

void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_u64le(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

uint32_t get_u32le(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

uint64_t get_u64le(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::vector<uint8_t> control_payload(const json& j) {
  const std::string s = j.dump();  // canonical: sorted keys, compact
  return std::vector<uint8_t>(s.begin(), s.end());
}

std::vector<uint8_t> encode_payload(const Message& msg) {
  std::vector<uint8_t> payload;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Hello>) {
          json j;
          j["ecn_id"] = m.ecn_id;
          j["n_samples"] = m.n_samples;
          j["protocol_version"] = m.protocol_version;
          j["schema_hash"] = hash_to_hex(m.schema_hash);
          payload = control_payload(j);
        } else if constexpr (std::is_same_v<T, Eligible>) {
          json j;
          j["accepted"] = m.accepted;
          j["reason"] = m.reason;
          payload = control_payload(j);
        } else if constexpr (std::is_same_v<T, TrainConfig>) {
          json j;
          j["model_spec"]["input_dim"] = m.model_spec.input_dim;
          j["model_spec"]["hidden_dims"] = m.model_spec.hidden_dims;
          j["model_spec"]["output_dim"] = m.model_spec.output_dim;
          j["hyperparams"]["eta"] = m.hyperparams.eta;
          j["hyperparams"]["local_epochs"] = m.hyperparams.local_epochs;
          j["hyperparams"]["batch_size"] = m.hyperparams.batch_size;
          j["hyperparams"]["rounds"] = m.hyperparams.rounds;
          j["hyperparams"]["shuffle_seed"] = m.hyperparams.shuffle_seed;
          payload = control_payload(j);
        } else if constexpr (std::is_same_v<T, GlobalModel>) {
          payload.reserve(4 + m.param_blob.size());
          put_u32le(payload, m.round_index);
          payload.insert(payload.end(), m.param_blob.begin(),
                         m.param_blob.end());
        } else if constexpr (std::is_same_v<T, LocalUpdate>) {
          payload.reserve(12 + m.param_blob.size());
          put_u32le(payload, m.round_index);
          put_u64le(payload, m.n_samples);
          payload.insert(payload.end(), m.param_blob.begin(),
                         m.param_blob.end());
        } else if constexpr (std::is_same_v<T, Done>) {
          json j;
          if (m.final_accuracy) {
            j["final_accuracy"] = *m.final_accuracy;
          } else {
            j["final_accuracy"] = nullptr;
          }
          payload = control_payload(j);
        } else if constexpr (std::is_same_v<T, ErrorMsg>) {
          json j;
          j["code"] = m.code;
          j["detail"] = m.detail;
          payload = control_payload(j);
        }
      },
      msg);
  return payload;
}

}  // namespace

MsgType message_type(const Message& msg) {
  return std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Hello>) return MsgType::kHello;
        if constexpr (std::is_same_v<T, Eligible>) return MsgType::kEligible;
        if constexpr (std::is_same_v<T, TrainConfig>) return MsgType::kTrainConfig;
        if constexpr (std::is_same_v<T, GlobalModel>) return MsgType::kGlobalModel;
        if constexpr (std::is_same_v<T, LocalUpdate>) return MsgType::kLocalUpdate;
        if constexpr (std::is_same_v<T, Done>) return MsgType::kDone;
        if constexpr (std::is_same_v<T, ErrorMsg>) return MsgType::kError;
      },
      msg);
}

std::vector<uint8_t> encode_frame(const Message& msg) {
  const std::vector<uint8_t> payload = encode_payload(msg);
  const uint64_t body_len = 1 + payload.size();
  if (body_len > kMaxFrameLen) throw ProtocolError("frame exceeds 64 MiB");

  std::vector<uint8_t> frame;
  frame.reserve(4 + body_len);
  const uint32_t len = uint32_t(body_len);
  frame.push_back(uint8_t(len >> 24));  // length is big-endian on the wire
  frame.push_back(uint8_t(len >> 16));
  frame.push_back(uint8_t(len >> 8));
  frame.push_back(uint8_t(len));
  frame.push_back(uint8_t(message_type(msg)));
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

Message decode_payload(uint8_t msg_type, const uint8_t* payload, size_t len) {
  switch (MsgType(msg_type)) {
    case MsgType::kHello: {
      const json j = parse_control(payload, len);
      Hello m;
      m.ecn_id = field<std::string>(j, "ecn_id");
      m.n_samples = field<uint64_t>(j, "n_samples");
      m.schema_hash = hash_from_hex(field<std::string>(j, "schema_hash"));
      m.protocol_version = field<uint32_t>(j, "protocol_version");
      return m;
    }
    case MsgType::kEligible: {
      const json j = parse_control(payload, len);
      Eligible m;
      m.accepted = field<bool>(j, "accepted");
      m.reason = field<std::string>(j, "reason");
      return m;
    }
    case MsgType::kTrainConfig: {
      const json j = parse_control(payload, len);
      if (!j.contains("model_spec") || !j.contains("hyperparams")) {
        throw FormatError("train config missing model_spec or hyperparams");
      }
      TrainConfig m;
      const json& ms = j.at("model_spec");
      m.model_spec.input_dim = field<uint32_t>(ms, "input_dim");
      m.model_spec.hidden_dims = field<std::vector<uint32_t>>(ms, "hidden_dims");
      m.model_spec.output_dim = field<uint32_t>(ms, "output_dim");
      const json& hp = j.at("hyperparams");
      m.hyperparams.eta = field<double>(hp, "eta");
      m.hyperparams.local_epochs = field<uint32_t>(hp, "local_epochs");
      m.hyperparams.batch_size = field<uint32_t>(hp, "batch_size");
      m.hyperparams.rounds = field<uint32_t>(hp, "rounds");
      m.hyperparams.shuffle_seed = field<uint64_t>(hp, "shuffle_seed");
      return m;
    }
    case MsgType::kGlobalModel: {
      if (len < 4) throw FormatError("global model payload too short");
      GlobalModel m;
      m.round_index = get_u32le(payload);
      m.param_blob.assign(payload + 4, payload + len);
      return m;
    }
    case MsgType::kLocalUpdate: {
      if (len < 12) throw FormatError("local update payload too short");
      LocalUpdate m;
      m.round_index = get_u32le(payload);
      m.n_samples = get_u64le(payload + 4);
      m.param_blob.assign(payload + 12, payload + len);
      return m;
    }
    case MsgType::kDone: {
      const json j = parse_control(payload, len);
      Done m;
      if (!j.contains("final_accuracy")) {
        throw FormatError("done message missing final_accuracy");
      }
      if (!j.at("final_accuracy").is_null()) {
        m.final_accuracy = field<double>(j, "final_accuracy");
      }
      return m;
    }
    case MsgType::kError: {
      const json j = parse_control(payload, len);
      ErrorMsg m;
      m.code = field<std::string>(j, "code");
      m.detail = field<std::string>(j, "detail");
      return m;
    }
  }
  throw ProtocolError("unknown message type 0x" + [msg_type] {
    char buf[3];
    std::snprintf(buf, sizeof(buf), "%02x", msg_type);
    return std::string(buf);
  }());
}

Message decode_frame(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 5) throw ProtocolError("frame shorter than header");
  const uint32_t len = uint32_t(bytes[0]) << 24 | uint32_t(bytes[1]) << 16 |
                       uint32_t(bytes[2]) << 8 | uint32_t(bytes[3]);
  if (len < 1) throw ProtocolError("frame length must be at least 1");
  if (len > kMaxFrameLen) throw ProtocolError("frame exceeds 64 MiB");
  if (bytes.size() != size_t(len) + 4) {
    throw ProtocolError("frame length prefix does not match byte count");
  }
  return decode_payload(bytes[4], bytes.data() + 5, len - 1);
}

}  // namespace fedqot::wire
