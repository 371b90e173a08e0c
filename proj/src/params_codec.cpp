#include <cmath>
#include <cstring>
#include <string>

#include "fedqot/nn.hpp"

namespace fedqot {

namespace {

constexpr char kMagic[4] = {'F', 'A', 'V', 'G'};
constexpr uint8_t kVersion = 1;

void put_u16le(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v & 0xff));
  out.push_back(uint8_t(v >> 8));
}

void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

uint32_t get_u32le(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

}  // namespace

std::vector<uint8_t> serialize_params(const ParameterVector& params) {
  const auto shapes = params.spec.layer_shapes();
  if (shapes.size() > 255) throw FormatError("too many layers for the blob format");
  if (params.values.size() != params.spec.param_count()) {
    throw SchemaError("parameter vector length does not match its spec");
  }
  for (double v : params.values) {
    if (!std::isfinite(v)) {
      throw CorruptionError("refusing to serialize non-finite parameters");
    }
  }

  std::vector<uint8_t> out;
  out.reserve(8 + 8 * shapes.size() + 8 * params.values.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.push_back(uint8_t(shapes.size()));
  put_u16le(out, 0);  // reserved
  for (auto [fan_in, fan_out] : shapes) {
    put_u32le(out, fan_in);
    put_u32le(out, fan_out);
  }
  for (double v : params.values) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(bits >> (8 * i)));
  }
  return out;
}

ModelSpec peek_blob_spec(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic in parameter blob");
  }
  if (bytes[4] != kVersion) {
    throw FormatError("unsupported parameter blob version " +
                      std::to_string(int(bytes[4])));
  }
  const size_t layers = bytes[5];
  if (layers < 1) throw FormatError("blob declares zero layers");
  if (bytes.size() < 8 + 8 * layers) {
    throw FormatError("blob too short for its layer table");
  }
  ModelSpec spec;
  for (size_t l = 0; l < layers; ++l) {
    const uint8_t* p = bytes.data() + 8 + 8 * l;
    const uint32_t fan_in = get_u32le(p);
    const uint32_t fan_out = get_u32le(p + 4);
    if (l == 0) {
      spec.input_dim = fan_in;
    } else if (spec.hidden_dims.back() != fan_in) {
      throw FormatError("blob layer table is not a chain");
    }
    spec.hidden_dims.push_back(fan_out);
  }
  spec.output_dim = spec.hidden_dims.back();
  spec.hidden_dims.pop_back();
  spec.validate();
  return spec;
}

ParameterVector deserialize_params(const std::vector<uint8_t>& bytes,
                                   const ModelSpec& spec) {
  spec.validate();
  const auto shapes = spec.layer_shapes();
  const size_t header = 8 + 8 * shapes.size();
  const size_t expected = header + 8 * spec.param_count();

  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic in parameter blob");
  }
  if (bytes[4] != kVersion) {
    throw FormatError("unsupported parameter blob version " +
                      std::to_string(int(bytes[4])));
  }
  if (bytes[5] != shapes.size()) {
    throw FormatError("blob layer count " + std::to_string(int(bytes[5])) +
                      " does not match spec");
  }
  if (bytes[6] != 0 || bytes[7] != 0) {
    throw FormatError("reserved header bytes must be zero");
  }
  if (bytes.size() != expected) {
    throw FormatError("blob length " + std::to_string(bytes.size()) +
                      ", expected " + std::to_string(expected));
  }
  for (size_t l = 0; l < shapes.size(); ++l) {
    const uint8_t* p = bytes.data() + 8 + 8 * l;
    if (get_u32le(p) != shapes[l].first || get_u32le(p + 4) != shapes[l].second) {
      throw FormatError("blob layer " + std::to_string(l) +
                        " dims do not match spec");
    }
  }

  ParameterVector pv;
  pv.spec = spec;
  pv.values.resize(spec.param_count());
  const uint8_t* p = bytes.data() + header;
  for (size_t i = 0; i < pv.values.size(); ++i, p += 8) {
    uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[b];
    double v;
    std::memcpy(&v, &bits, 8);
    if (!std::isfinite(v)) {
      throw CorruptionError("non-finite value in parameter blob at index " +
                            std::to_string(i));
    }
    pv.values[i] = v;
  }
  return pv;
}

}  // namespace fedqot
