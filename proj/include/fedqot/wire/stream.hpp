#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "fedqot/wire/frames.hpp"

namespace fedqot::wire {

// Reliable, ordered, optionally-encrypted byte stream. Bindings: in-memory
// duplex (tests), plain TCP, TLS over TCP.
class ByteStream {
 public:
  virtual ~ByteStream() = default;

  // Blocking read of up to len bytes; returns 0 on orderly EOF.
  virtual size_t read_some(uint8_t* buf, size_t len) = 0;

  // Writes the whole buffer or throws IoError.
  virtual void write_all(const uint8_t* buf, size_t len) = 0;

  // Unblocks pending reads/writes on any thread and closes both directions.
  // Safe to call more than once.
  virtual void shutdown() = 0;
};

// Frame I/O over a stream. read_message throws IoError on EOF mid-frame and
// returns nullopt on a clean EOF at a frame boundary.
void write_message(ByteStream& s, const Message& msg);
std::optional<Message> read_message(ByteStream& s);

// ---- in-memory duplex ----

// Two connected endpoints backed by in-process buffers.
std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>>
make_memory_duplex();

// ---- TCP ----

std::unique_ptr<ByteStream> tcp_connect(const std::string& host, uint16_t port);

class StreamAcceptor {
 public:
  virtual ~StreamAcceptor() = default;
  // Blocks for the next connection; nullptr once closed.
  virtual std::unique_ptr<ByteStream> accept() = 0;
  virtual void close() = 0;
};

class TcpAcceptor : public StreamAcceptor {
 public:
  // Binds and listens; port 0 picks a free port (see bound_port()).
  TcpAcceptor(const std::string& host, uint16_t port);
  ~TcpAcceptor() override;
  std::unique_ptr<ByteStream> accept() override;
  void close() override;
  uint16_t bound_port() const { return port_; }

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

// ---- TLS over TCP ----

struct TlsServerOptions {
  std::string cert_path;
  std::string key_path;
};

struct TlsClientOptions {
  std::string ca_path;
};

std::unique_ptr<ByteStream> tls_connect(const std::string& host, uint16_t port,
                                        const TlsClientOptions& opts);

class TlsAcceptor : public StreamAcceptor {
 public:
  TlsAcceptor(const std::string& host, uint16_t port,
              const TlsServerOptions& opts);
  ~TlsAcceptor() override;
  std::unique_ptr<ByteStream> accept() override;
  void close() override;
  uint16_t bound_port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ---- traffic capture ----

// Shared byte sink for every direction of every recorded stream.
struct TrafficCapture {
  std::mutex mu;
  std::vector<uint8_t> bytes;

  void append(const uint8_t* data, size_t len) {
    std::lock_guard<std::mutex> lock(mu);
    bytes.insert(bytes.end(), data, data + len);
  }

  bool contains(const std::vector<uint8_t>& needle);
};

// Decorator that copies all traffic of the wrapped stream into per-direction
// captures (either may be shared across streams, or null to skip).
std::unique_ptr<ByteStream> record_stream(
    std::unique_ptr<ByteStream> inner, std::shared_ptr<TrafficCapture> read_cap,
    std::shared_ptr<TrafficCapture> write_cap);

}  // namespace fedqot::wire
