#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fedqot/fedavg.hpp"
#include "fedqot/nn.hpp"

namespace fedqot::wire {

// Framing: u32 big-endian length of (type byte + payload), u8 message type,
// payload. Control payloads are canonical JSON (sorted keys, no
// insignificant whitespace); model payloads are binary.
enum class MsgType : uint8_t {
  kHello = 0x01,
  kEligible = 0x02,
  kTrainConfig = 0x03,
  kGlobalModel = 0x04,
  kLocalUpdate = 0x05,
  kDone = 0x06,
  kError = 0x7F,
};

constexpr size_t kMaxFrameLen = 64ull << 20;  // 64 MiB, type byte included
constexpr uint32_t kProtocolVersion = 1;

struct Hello {
  std::string ecn_id;
  uint64_t n_samples = 0;
  uint64_t schema_hash = 0;
  uint32_t protocol_version = kProtocolVersion;
  bool operator==(const Hello&) const = default;
};

struct Eligible {
  bool accepted = false;
  std::string reason;
  bool operator==(const Eligible&) const = default;
};

struct TrainConfig {
  ModelSpec model_spec;
  Hyperparams hyperparams;
  bool operator==(const TrainConfig&) const = default;
};

// Payload: u32 round_index little-endian, then the parameter blob.
struct GlobalModel {
  uint32_t round_index = 0;
  std::vector<uint8_t> param_blob;
  bool operator==(const GlobalModel&) const = default;
};

// Payload: u32 round_index LE, u64 n_samples LE, then the parameter blob.
struct LocalUpdate {
  uint32_t round_index = 0;
  uint64_t n_samples = 0;
  std::vector<uint8_t> param_blob;
  bool operator==(const LocalUpdate&) const = default;
};

struct Done {
  std::optional<double> final_accuracy;
  bool operator==(const Done&) const = default;
};

struct ErrorMsg {
  std::string code;
  std::string detail;
  bool operator==(const ErrorMsg&) const = default;
};

using Message = std::variant<Hello, Eligible, TrainConfig, GlobalModel,
                             LocalUpdate, Done, ErrorMsg>;

MsgType message_type(const Message& msg);

// Full frame bytes for a message (length prefix included).
std::vector<uint8_t> encode_frame(const Message& msg);

// Decodes a complete frame (length prefix included). Throws ProtocolError on
// framing violations and FormatError on malformed payloads.
Message decode_frame(const std::vector<uint8_t>& bytes);

// Payload-level decode for stream readers that consume the prefix themselves.
Message decode_payload(uint8_t msg_type, const uint8_t* payload, size_t len);

}  // namespace fedqot::wire
