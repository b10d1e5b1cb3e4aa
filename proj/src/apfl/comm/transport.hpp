#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "apfl/comm/auth.hpp"
#include "apfl/comm/frame.hpp"

namespace apfl {

/// Server-side request handler. `identity` is the authenticated client id
/// (empty when authentication is off). May block; each connection has its own
/// thread.
using FrameHandler = std::function<Frame(const Frame& request, const std::string& identity)>;

/// Authentication gate in front of a handler; counts what got through.
class Dispatcher {
 public:
  Dispatcher(FrameHandler handler, std::shared_ptr<const Authenticator> auth);

  Frame handle(const Frame& request);
  std::uint64_t dispatched() const { return dispatched_.load(); }
  std::uint64_t rejected() const { return rejected_.load(); }

 private:
  FrameHandler handler_;
  std::shared_ptr<const Authenticator> auth_;
  std::atomic<std::uint64_t> dispatched_{0};
  std::atomic<std::uint64_t> rejected_{0};
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual Frame roundtrip(const Frame& request) = 0;
};

/// Same process, still passes through encode/decode so the wire format is exercised.
class InProcTransport final : public Transport {
 public:
  explicit InProcTransport(Dispatcher& d) : dispatcher_(d) {}
  Frame roundtrip(const Frame& request) override;

 private:
  Dispatcher& dispatcher_;
};

struct TcpServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  std::size_t max_payload = kDefaultMaxPayload;
};

class TcpServer {
 public:
  TcpServer(TcpServerOptions opts, Dispatcher& dispatcher);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return port_; }
  /// Waits up to `grace` for open connections to close before cutting them.
  void stop(std::chrono::milliseconds grace = std::chrono::milliseconds(0));

 private:
  void accept_loop();
  void serve(int fd);

  TcpServerOptions opts_;
  Dispatcher& dispatcher_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<std::thread> workers_;
  std::list<int> open_fds_;
};

struct RetryPolicy {
  int attempts = 20;
  std::chrono::milliseconds backoff{100};
};

class TcpClientTransport final : public Transport {
 public:
  TcpClientTransport(std::string host, std::uint16_t port, RetryPolicy retry = {},
                     std::size_t max_payload = kDefaultMaxPayload);
  ~TcpClientTransport() override;
  Frame roundtrip(const Frame& request) override;

 private:
  void connect_with_retry();

  std::string host_;
  std::uint16_t port_;
  RetryPolicy retry_;
  std::size_t max_payload_;
  int fd_ = -1;
};

/// Reads one frame from a stream socket; nullopt on clean EOF before any byte.
std::optional<Frame> read_frame(int fd, std::size_t max_payload);
void write_frame(int fd, const Frame& f);

}  // namespace apfl
