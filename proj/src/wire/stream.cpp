#include "fedqot/wire/stream.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/err.h>
#include <openssl/ssl.h>

#include <algorithm>
#include <condition_variable>
#include <cstring>
#include <deque>

namespace fedqot::wire {

// ---- frame I/O ----

namespace {

// Returns false on clean EOF before the first byte; throws IoError on EOF
// mid-buffer.
bool read_exact(ByteStream& s, uint8_t* buf, size_t len) {
  size_t got = 0;
  while (got < len) {
    const size_t n = s.read_some(buf + got, len - got);
    if (n == 0) {
      if (got == 0) return false;
      throw IoError("connection closed mid-frame");
    }
    got += n;
  }
  return true;
}

}  // namespace

void write_message(ByteStream& s, const Message& msg) {
  const std::vector<uint8_t> frame = encode_frame(msg);
  s.write_all(frame.data(), frame.size());
}

std::optional<Message> read_message(ByteStream& s) {
  uint8_t head[5];
  if (!read_exact(s, head, 4)) return std::nullopt;
  const uint32_t len = uint32_t(head[0]) << 24 | uint32_t(head[1]) << 16 |
                       uint32_t(head[2]) << 8 | uint32_t(head[3]);
  if (len < 1) throw ProtocolError("frame length must be at least 1");
  if (len > kMaxFrameLen) throw ProtocolError("frame exceeds 64 MiB");
  if (!read_exact(s, head + 4, 1)) throw IoError("connection closed mid-frame");
  std::vector<uint8_t> payload(len - 1);
  if (len > 1 && !read_exact(s, payload.data(), payload.size())) {
    throw IoError("connection closed mid-frame");
  }
  return decode_payload(head[4], payload.data(), payload.size());
}

// ---- in-memory duplex ----

namespace {

// One direction of the duplex: a bounded-ish FIFO with blocking reads.
struct Pipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<uint8_t> buf;
  bool closed = false;

  void close() {
    std::lock_guard<std::mutex> lock(mu);
    closed = true;
    cv.notify_all();
  }

  void write(const uint8_t* data, size_t len) {
    std::lock_guard<std::mutex> lock(mu);
    if (closed) throw IoError("write on closed in-memory stream");
    buf.insert(buf.end(), data, data + len);
    cv.notify_all();
  }

  size_t read(uint8_t* out, size_t len) {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return !buf.empty() || closed; });
    if (buf.empty()) return 0;  // closed and drained
    const size_t n = std::min(len, buf.size());
    for (size_t i = 0; i < n; ++i) {
      out[i] = buf.front();
      buf.pop_front();
    }
    return n;
  }
};

class MemoryStream : public ByteStream {
 public:
  MemoryStream(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~MemoryStream() override { shutdown(); }

  size_t read_some(uint8_t* buf, size_t len) override {
    return in_->read(buf, len);
  }
  void write_all(const uint8_t* buf, size_t len) override {
    out_->write(buf, len);
  }
  void shutdown() override {
    in_->close();
    out_->close();
  }

 private:
  std::shared_ptr<Pipe> in_, out_;
};

}  // namespace

std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>>
make_memory_duplex() {
  auto a_to_b = std::make_shared<Pipe>();
  auto b_to_a = std::make_shared<Pipe>();
  return {std::make_unique<MemoryStream>(b_to_a, a_to_b),
          std::make_unique<MemoryStream>(a_to_b, b_to_a)};
}

// ---- TCP ----

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw IoError(what + ": " + std::strerror(errno));
}

class TcpStream : public ByteStream {
 public:
  explicit TcpStream(int fd) : fd_(fd) {}
  ~TcpStream() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
    }
  }

  size_t read_some(uint8_t* buf, size_t len) override {
    for (;;) {
      const ssize_t n = ::recv(fd_, buf, len, 0);
      if (n >= 0) return size_t(n);
      if (errno == EINTR) continue;
      if (errno == ECONNRESET || errno == ESHUTDOWN) return 0;
      throw_errno("recv");
    }
  }

  void write_all(const uint8_t* buf, size_t len) override {
    size_t sent = 0;
    while (sent < len) {
      const ssize_t n = ::send(fd_, buf + sent, len - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw_errno("send");
      }
      sent += size_t(n);
    }
  }

  void shutdown() override {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  // Transfers the descriptor out; the stream no longer closes it.
  int release_fd() {
    const int fd = fd_;
    fd_ = -1;
    return fd;
  }

 private:
  int fd_;
};

int connect_fd(const std::string& host, uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0) {
    throw IoError("cannot resolve '" + host + "'");
  }
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw IoError("cannot connect to " + host + ":" + service);
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

}  // namespace

std::unique_ptr<ByteStream> tcp_connect(const std::string& host,
                                        uint16_t port) {
  return std::make_unique<TcpStream>(connect_fd(host, port));
}

TcpAcceptor::TcpAcceptor(const std::string& host, uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw_errno("socket");
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (host.empty() || host == "0.0.0.0") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
  } else if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw IoError("listen host must be an IPv4 address, got '" + host + "'");
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    throw_errno("bind");
  }
  if (::listen(fd_, 16) != 0) {
    ::close(fd_);
    throw_errno("listen");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpAcceptor::~TcpAcceptor() { close(); }

std::unique_ptr<ByteStream> TcpAcceptor::accept() {
  const int fd = ::accept(fd_, nullptr, nullptr);
  if (fd < 0) return nullptr;  // acceptor closed or failed
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<TcpStream>(fd);
}

void TcpAcceptor::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

// ---- TLS ----

namespace {

struct SslInit {
  SslInit() {
    SSL_library_init();
    SSL_load_error_strings();
  }
};

void ensure_ssl_init() { static SslInit init; }

[[noreturn]] void throw_ssl(const std::string& what) {
  char buf[256];
  ERR_error_string_n(ERR_get_error(), buf, sizeof(buf));
  throw IoError(what + ": " + buf);
}

struct CtxDeleter {
  void operator()(SSL_CTX* ctx) const { SSL_CTX_free(ctx); }
};
using CtxPtr = std::unique_ptr<SSL_CTX, CtxDeleter>;

class TlsStream : public ByteStream {
 public:
  // Takes ownership of fd and ssl; ssl is already connected/accepted.
  TlsStream(int fd, SSL* ssl) : fd_(fd), ssl_(ssl) {}

  ~TlsStream() override {
    shutdown();
    SSL_free(ssl_);
    ::close(fd_);
  }

  size_t read_some(uint8_t* buf, size_t len) override {
    const int n = SSL_read(ssl_, buf, int(len));
    if (n > 0) return size_t(n);
    const int err = SSL_get_error(ssl_, n);
    if (err == SSL_ERROR_ZERO_RETURN) return 0;  // clean TLS shutdown
    if (err == SSL_ERROR_SYSCALL && ERR_peek_error() == 0) return 0;
    throw_ssl("SSL_read");
  }

  void write_all(const uint8_t* buf, size_t len) override {
    size_t sent = 0;
    while (sent < len) {
      const int n = SSL_write(ssl_, buf + sent, int(len - sent));
      if (n <= 0) throw_ssl("SSL_write");
      sent += size_t(n);
    }
  }

  void shutdown() override {
    // Best-effort close_notify, then unblock any reader via TCP shutdown.
    SSL_shutdown(ssl_);
    ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_;
  SSL* ssl_;
};

CtxPtr make_server_ctx(const TlsServerOptions& opts) {
  ensure_ssl_init();
  CtxPtr ctx(SSL_CTX_new(TLS_server_method()));
  if (!ctx) throw_ssl("SSL_CTX_new");
  if (SSL_CTX_use_certificate_chain_file(ctx.get(), opts.cert_path.c_str()) != 1) {
    throw_ssl("loading certificate '" + opts.cert_path + "'");
  }
  if (SSL_CTX_use_PrivateKey_file(ctx.get(), opts.key_path.c_str(),
                                  SSL_FILETYPE_PEM) != 1) {
    throw_ssl("loading key '" + opts.key_path + "'");
  }
  return ctx;
}

CtxPtr make_client_ctx(const TlsClientOptions& opts) {
  ensure_ssl_init();
  CtxPtr ctx(SSL_CTX_new(TLS_client_method()));
  if (!ctx) throw_ssl("SSL_CTX_new");
  if (SSL_CTX_load_verify_locations(ctx.get(), opts.ca_path.c_str(), nullptr) != 1) {
    throw_ssl("loading CA '" + opts.ca_path + "'");
  }
  SSL_CTX_set_verify(ctx.get(), SSL_VERIFY_PEER, nullptr);
  return ctx;
}

}  // namespace

std::unique_ptr<ByteStream> tls_connect(const std::string& host, uint16_t port,
                                        const TlsClientOptions& opts) {
  CtxPtr ctx = make_client_ctx(opts);
  const int fd = connect_fd(host, port);
  SSL* ssl = SSL_new(ctx.get());
  if (!ssl) {
    ::close(fd);
    throw_ssl("SSL_new");
  }
  SSL_set_fd(ssl, fd);
  SSL_set_tlsext_host_name(ssl, host.c_str());
  if (SSL_connect(ssl) != 1) {
    SSL_free(ssl);
    ::close(fd);
    throw_ssl("TLS handshake with " + host);
  }
  return std::make_unique<TlsStream>(fd, ssl);
}

struct TlsAcceptor::Impl {
  TcpAcceptor tcp;
  CtxPtr ctx;

  Impl(const std::string& host, uint16_t port, const TlsServerOptions& opts)
      : tcp(host, port), ctx(make_server_ctx(opts)) {}
};

TlsAcceptor::TlsAcceptor(const std::string& host, uint16_t port,
                         const TlsServerOptions& opts)
    : impl_(std::make_unique<Impl>(host, port, opts)) {}

TlsAcceptor::~TlsAcceptor() = default;

uint16_t TlsAcceptor::bound_port() const { return impl_->tcp.bound_port(); }

std::unique_ptr<ByteStream> TlsAcceptor::accept() {
  for (;;) {
    auto raw = impl_->tcp.accept();
    if (!raw) return nullptr;
    const int fd = static_cast<TcpStream*>(raw.get())->release_fd();
    SSL* ssl = SSL_new(impl_->ctx.get());
    if (!ssl) {
      ::close(fd);
      throw_ssl("SSL_new");
    }
    SSL_set_fd(ssl, fd);
    if (SSL_accept(ssl) != 1) {
      SSL_free(ssl);
      ::close(fd);
      continue;  // one failed handshake must not kill the accept loop
    }
    return std::make_unique<TlsStream>(fd, ssl);
  }
}

void TlsAcceptor::close() { impl_->tcp.close(); }

bool TrafficCapture::contains(const std::vector<uint8_t>& needle) {
  std::lock_guard<std::mutex> lock(mu);
  if (needle.empty()) return true;
  return std::search(bytes.begin(), bytes.end(), needle.begin(),
                     needle.end()) != bytes.end();
}

namespace {

class RecordingStream : public ByteStream {
 public:
  RecordingStream(std::unique_ptr<ByteStream> inner,
                  std::shared_ptr<TrafficCapture> read_cap,
                  std::shared_ptr<TrafficCapture> write_cap)
      : inner_(std::move(inner)),
        read_cap_(std::move(read_cap)),
        write_cap_(std::move(write_cap)) {}

  size_t read_some(uint8_t* buf, size_t len) override {
    const size_t n = inner_->read_some(buf, len);
    if (n > 0 && read_cap_) read_cap_->append(buf, n);
    return n;
  }

  void write_all(const uint8_t* buf, size_t len) override {
    if (write_cap_) write_cap_->append(buf, len);
    inner_->write_all(buf, len);
  }

  void shutdown() override { inner_->shutdown(); }

 private:
  std::unique_ptr<ByteStream> inner_;
  std::shared_ptr<TrafficCapture> read_cap_;
  std::shared_ptr<TrafficCapture> write_cap_;
};

}  // namespace

std::unique_ptr<ByteStream> record_stream(
    std::unique_ptr<ByteStream> inner, std::shared_ptr<TrafficCapture> read_cap,
    std::shared_ptr<TrafficCapture> write_cap) {
  return std::make_unique<RecordingStream>(std::move(inner),
                                           std::move(read_cap),
                                           std::move(write_cap));
}

}  // namespace fedqot::wire
