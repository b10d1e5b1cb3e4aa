#include "apfl/comm/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <spdlog/spdlog.h>

namespace apfl {

Dispatcher::Dispatcher(FrameHandler handler, std::shared_ptr<const Authenticator> auth)
    : handler_(std::move(handler)), auth_(auth ? std::move(auth) : std::make_shared<NoAuthenticator>()) {}

Frame Dispatcher::handle(const Frame& request) {
  const auto identity = auth_->verify(request.token);
  if (!identity) {
    ++rejected_;
    return error_frame(Errc::unauthenticated, "invalid or missing token");
  }
  if (!is_known_message_type(static_cast<std::uint8_t>(request.type)))
    return error_frame(Errc::unknown_type,
                       "unknown message type " + std::to_string(static_cast<int>(request.type)));
  ++dispatched_;
  try {
    return handler_(request, *identity);
  } catch (const Error& e) {
    return error_frame(e.code(), e.what());
  } catch (const std::exception& e) {
    return error_frame(Errc::internal, e.what());
  }
}

Frame InProcTransport::roundtrip(const Frame& request) {
  const Frame decoded = decode_frame(encode_frame(request));
  return decode_frame(encode_frame(dispatcher_.handle(decoded)));
}

namespace {

// false on clean EOF before the first byte
bool read_exact(int fd, std::uint8_t* dst, std::size_t n, bool eof_ok) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, dst + got, n - got, 0);
    if (r == 0) {
      if (got == 0 && eof_ok) return false;
      fail(Errc::protocol_error, "connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      fail(Errc::io_error, std::string("recv: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void write_all(int fd, const std::uint8_t* src, std::size_t n) {
  std::size_t sent = 0;
  while (sent < n) {
    const ssize_t r = ::send(fd, src + sent, n - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      fail(Errc::io_error, std::string("send: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(r);
  }
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

// Closing with unread input makes the kernel send RST, which can destroy the
// error reply before the peer reads it. Half-close and drain for a moment.
void linger_close_input(int fd) {
  ::shutdown(fd, SHUT_WR);
  timeval tv{0, 200 * 1000};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  std::uint8_t sink[4096];
  std::size_t drained = 0;
  while (drained < (std::size_t{1} << 20)) {
    const ssize_t r = ::recv(fd, sink, sizeof sink, 0);
    if (r <= 0) break;
    drained += static_cast<std::size_t>(r);
  }
}

// The server hangs up after these, so the connection is no longer usable.
bool is_framing_error(const Frame& reply) {
  if (reply.type != MessageType::error_reply || reply.payload.size() < 2) return false;
  const auto code = static_cast<Errc>((reply.payload[0] << 8) | reply.payload[1]);
  return code == Errc::bad_magic || code == Errc::unsupported_version || code == Errc::oversized_payload ||
         code == Errc::protocol_error;
}

}  // namespace

std::optional<Frame> read_frame(int fd, std::size_t max_payload) {
  std::uint8_t head[8];
  if (!read_exact(fd, head, 8, true)) return std::nullopt;
  if (std::memcmp(head, "APFL", 4) != 0) fail(Errc::bad_magic, "bad frame magic");
  if (head[4] != kFrameVersion) fail(Errc::unsupported_version, "unsupported frame version");
  Frame f;
  f.type = static_cast<MessageType>(head[5]);
  const std::size_t token_len = (std::size_t{head[6]} << 8) | head[7];
  f.token.resize(token_len);
  if (token_len) read_exact(fd, reinterpret_cast<std::uint8_t*>(f.token.data()), token_len, false);
  std::uint8_t len_be[4];
  read_exact(fd, len_be, 4, false);
  const std::uint32_t len = (std::uint32_t{len_be[0]} << 24) | (std::uint32_t{len_be[1]} << 16) |
                            (std::uint32_t{len_be[2]} << 8) | len_be[3];
  if (len > max_payload) fail(Errc::oversized_payload, "frame payload of " + std::to_string(len) + " bytes over limit");
  f.payload.resize(len);
  if (len) read_exact(fd, f.payload.data(), len, false);
  return f;
}

void write_frame(int fd, const Frame& f) {
  const Bytes b = encode_frame(f);
  write_all(fd, b.data(), b.size());
}

TcpServer::TcpServer(TcpServerOptions opts, Dispatcher& dispatcher) : opts_(std::move(opts)), dispatcher_(dispatcher) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) fail(Errc::io_error, "socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(opts_.port);
  if (::inet_pton(AF_INET, opts_.host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    fail(Errc::config_error, "bind address must be a dotted IPv4 address: " + opts_.host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 64) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    fail(Errc::io_error, "cannot listen on " + opts_.host + ":" + std::to_string(opts_.port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::stop(std::chrono::milliseconds grace) {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  // Let peers hang up on their own first so in-flight replies get written.
  const auto deadline = std::chrono::steady_clock::now() + grace;
  while (std::chrono::steady_clock::now() < deadline) {
    {
      std::lock_guard lock(mu_);
      if (open_fds_.empty()) break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  std::list<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

void TcpServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      if (stopping_) return;
      spdlog::warn("accept failed: {}", std::strerror(errno));
      continue;
    }
    set_nodelay(fd);
    std::lock_guard lock(mu_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    open_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve(fd); });
  }
}

void TcpServer::serve(int fd) {
  try {
    while (auto req = read_frame(fd, opts_.max_payload)) write_frame(fd, dispatcher_.handle(*req));
  } catch (const Error& e) {
    // Malformed input: tell the peer, then hang up.
    if (e.code() != Errc::io_error && !stopping_) {
      try {
        write_frame(fd, error_frame(e.code(), e.what()));
        linger_close_input(fd);
      } catch (const Error&) {
      }
    }
  }
  std::lock_guard lock(mu_);
  open_fds_.remove(fd);
  ::close(fd);
}

TcpClientTransport::TcpClientTransport(std::string host, std::uint16_t port, RetryPolicy retry,
                                       std::size_t max_payload)
    : host_(std::move(host)), port_(port), retry_(retry), max_payload_(max_payload) {}

TcpClientTransport::~TcpClientTransport() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpClientTransport::connect_with_retry() {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  const std::string port = std::to_string(port_);
  for (int attempt = 1; attempt <= retry_.attempts; ++attempt) {
    addrinfo* res = nullptr;
    if (::getaddrinfo(host_.c_str(), port.c_str(), &hints, &res) == 0) {
      for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
          set_nodelay(fd);
          fd_ = fd;
          break;
        }
        ::close(fd);
      }
      ::freeaddrinfo(res);
    }
    if (fd_ >= 0) return;
    spdlog::debug("connect to {}:{} failed (attempt {}/{}), retrying in {} ms", host_, port_, attempt,
                 retry_.attempts, retry_.backoff.count());
    if (attempt < retry_.attempts) std::this_thread::sleep_for(retry_.backoff);
  }
  fail(Errc::connection_refused,
       "no server at " + host_ + ":" + port + " after " + std::to_string(retry_.attempts) + " attempts");
}

Frame TcpClientTransport::roundtrip(const Frame& request) {
  if (fd_ < 0) connect_with_retry();
  try {
    write_frame(fd_, request);
    auto reply = read_frame(fd_, max_payload_);
    if (!reply) fail(Errc::protocol_error, "server closed the connection");
    if (is_framing_error(*reply)) {
      ::close(fd_);
      fd_ = -1;
    }
    return std::move(*reply);
  } catch (const Error&) {
    ::close(fd_);
    fd_ = -1;
    throw;
  }
}

}  // namespace apfl
