#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsim/error.hpp"
#include "dsim/wire.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Message transport between agents. Everything above this layer speaks
// frames; the in-process hub moves them through queues, the TCP mesh over
// sockets with exactly one connection per pair of agents (the lower id
// dials, the higher id accepts), all contexts multiplexed on it.
// ---------------------------------------------------------------------------

struct Envelope {
  AgentId sender = 0;
  Frame frame;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual AgentId self() const = 0;
  virtual void send(AgentId to, const Frame& frame) = 0;
  virtual std::optional<Envelope> poll() = 0;
  virtual std::optional<Envelope> poll_wait(int timeout_ms) = 0;
  virtual void close() = 0;
};

namespace detail {

/// MPSC inbox shared by all producers feeding one agent.
class Inbox {
 public:
  void push(Envelope e) {
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      q_.push_back(std::move(e));
    }
    cv_.notify_one();
  }

  std::optional<Envelope> pop() {
    std::lock_guard lock(mu_);
    if (q_.empty()) return std::nullopt;
    Envelope e = std::move(q_.front());
    q_.pop_front();
    return e;
  }

  std::optional<Envelope> pop_wait(int timeout_ms) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                 [this] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    Envelope e = std::move(q_.front());
    q_.pop_front();
    return e;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Envelope> q_;
  bool closed_ = false;
};

}  // namespace detail

// -- in-process ---------------------------------------------------------------

class InProcTransport;

/// Wiring board for agents living in one process. Attach every participant,
/// then frames flow through per-agent inboxes with FIFO per sender.
class InProcHub {
 public:
  std::shared_ptr<InProcTransport> attach(AgentId id);

 private:
  friend class InProcTransport;

  std::shared_ptr<detail::Inbox> find(AgentId id) {
    std::lock_guard lock(mu_);
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : it->second;
  }

  void detach(AgentId id) {
    std::lock_guard lock(mu_);
    nodes_.erase(id);
  }

  std::mutex mu_;
  std::map<AgentId, std::shared_ptr<detail::Inbox>> nodes_;
};

class InProcTransport : public Transport {
 public:
  InProcTransport(InProcHub* hub, AgentId id,
                  std::shared_ptr<detail::Inbox> inbox)
      : hub_(hub), id_(id), inbox_(std::move(inbox)) {}

  ~InProcTransport() override { close(); }

  AgentId self() const override { return id_; }

  void send(AgentId to, const Frame& frame) override {
    auto target = hub_->find(to);
    if (!target) {
      throw StateError("agent " + std::to_string(to) + " is not attached");
    }
    target->push(Envelope{id_, frame});
  }

  std::optional<Envelope> poll() override { return inbox_->pop(); }

  std::optional<Envelope> poll_wait(int timeout_ms) override {
    return inbox_->pop_wait(timeout_ms);
  }

  void close() override {
    if (!closed_) {
      closed_ = true;
      inbox_->close();
      hub_->detach(id_);
    }
  }

 private:
  InProcHub* hub_;
  AgentId id_;
  std::shared_ptr<detail::Inbox> inbox_;
  bool closed_ = false;
};

inline std::shared_ptr<InProcTransport> InProcHub::attach(AgentId id) {
  auto inbox = std::make_shared<detail::Inbox>();
  {
    std::lock_guard lock(mu_);
    if (!nodes_.emplace(id, inbox).second) {
      throw ConfigError("agent " + std::to_string(id) + " attached twice");
    }
  }
  return std::make_shared<InProcTransport>(this, id, std::move(inbox));
}

// -- TCP ----------------------------------------------------------------------

namespace detail {

struct SockAddr {
  std::string host;
  std::uint16_t port = 0;
};

inline SockAddr parse_address(const std::string& address) {
  std::size_t colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw ConfigError("address must be host:port, got: " + address);
  }
  SockAddr out;
  out.host = address.substr(0, colon);
  try {
    int port = std::stoi(address.substr(colon + 1));
    // Port 0 is a valid bind target (the OS picks an ephemeral port).
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    out.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw ConfigError("bad port in address: " + address);
  }
  return out;
}

inline void write_all(int fd, const char* data, std::size_t len) {
  while (len > 0) {
    ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw StateError(std::string("socket write failed: ") +
                       std::strerror(errno));
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

}  // namespace detail

/// Mesh endpoint. Construction binds the listen socket; `start` launches the
/// accept loop and dials every configured peer with a larger id (so each
/// unordered pair ends up with exactly one connection). The first frame on a
/// connection is a REGISTER hello naming the dialer.
class TcpTransport : public Transport {
 public:
  explicit TcpTransport(AgentId id, const std::string& listen_address = "127.0.0.1:0")
      : id_(id) {
    detail::SockAddr addr = detail::parse_address(listen_address);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw StateError("cannot create listen socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(addr.port);
    if (::inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr) != 1) {
      ::close(listen_fd_);
      throw ConfigError("cannot parse listen host: " + addr.host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
      ::close(listen_fd_);
      throw StateError("cannot bind " + listen_address + ": " +
                       std::strerror(errno));
    }
    if (::listen(listen_fd_, 64) != 0) {
      ::close(listen_fd_);
      throw StateError("cannot listen: " + std::string(std::strerror(errno)));
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof bound;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    char host[64];
    ::inet_ntop(AF_INET, &bound.sin_addr, host, sizeof host);
    listen_address_ = std::string(host) + ":" + std::to_string(ntohs(bound.sin_port));
  }

  ~TcpTransport() override { close(); }

  AgentId self() const override { return id_; }
  const std::string& listen_address() const { return listen_address_; }

  /// Establishes the mesh. `peers` maps every other participant to its
  /// listen address; only peers with an id above ours are dialed here, the
  /// rest reach us through the accept loop.
  void start(const std::map<AgentId, std::string>& peers) {
    for (const auto& [peer, address] : peers) {
      if (peer <= id_) continue;  // lower ids reach us via accept_loop
      dial(peer, address);
    }
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  void send(AgentId to, const Frame& frame) override {
    std::shared_ptr<Conn> conn = wait_for_conn(to);
    std::string bytes = encode_frame(frame);
    std::lock_guard lock(conn->write_mu);
    detail::write_all(conn->fd, bytes.data(), bytes.size());
  }

  std::optional<Envelope> poll() override { return inbox_.pop(); }

  std::optional<Envelope> poll_wait(int timeout_ms) override {
    return inbox_.pop_wait(timeout_ms);
  }

  std::size_t connection_count() {
    std::lock_guard lock(mu_);
    return conns_.size();
  }

  void close() override {
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      closed_ = true;
    }
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    {
      std::lock_guard lock(mu_);
      for (auto& [peer, conn] : conns_) ::shutdown(conn->fd, SHUT_RDWR);
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    for (std::thread& t : reader_threads_) {
      if (t.joinable()) t.join();
    }
    {
      std::lock_guard lock(mu_);
      for (auto& [peer, conn] : conns_) ::close(conn->fd);
      conns_.clear();
    }
    inbox_.close();
  }

 private:
  struct Conn {
    int fd = -1;
    std::mutex write_mu;
  };

  void dial(AgentId peer, const std::string& address) {
    detail::SockAddr addr = detail::parse_address(address);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(addr.port);
    if (::inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr) != 1) {
      throw ConfigError("cannot parse peer host: " + addr.host);
    }
    // The peer may still be binding; retry briefly before giving up.
    int fd = -1;
    for (int attempt = 0; attempt < 100; ++attempt) {
      fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0) throw StateError("cannot create socket");
      if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) == 0) break;
      ::close(fd);
      fd = -1;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    if (fd < 0) {
      throw StateError("cannot connect to agent " + std::to_string(peer) +
                       " at " + address);
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto conn = std::make_shared<Conn>();
    conn->fd = fd;
    // Identify ourselves so the acceptor can attribute inbound frames.
    nlohmann::json hello{{"agent", id_}};
    std::string bytes = encode_frame(Frame{MsgType::kRegister, 0, hello.dump()});
    detail::write_all(fd, bytes.data(), bytes.size());
    register_conn(peer, conn, FrameParser{});
  }

  void register_conn(AgentId peer, std::shared_ptr<Conn> conn,
                     FrameParser parser) {
    {
      std::lock_guard lock(mu_);
      if (!conns_.emplace(peer, conn).second) {
        throw ProtocolError("duplicate connection for agent " +
                            std::to_string(peer));
      }
      reader_threads_.emplace_back(
          [this, peer, conn, p = std::move(parser)]() mutable {
            reader_loop(peer, conn, std::move(p));
          });
    }
    conn_cv_.notify_all();
  }

  std::shared_ptr<Conn> wait_for_conn(AgentId to) {
    std::unique_lock lock(mu_);
    if (!conn_cv_.wait_for(lock, std::chrono::seconds(10), [this, to] {
          return closed_ || conns_.count(to) > 0;
        })) {
      throw StateError("no connection to agent " + std::to_string(to));
    }
    if (closed_) throw StateError("transport closed");
    return conns_.at(to);
  }

  void accept_loop() {
    while (true) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) return;  // listen socket shut down
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      AgentId peer = 0;
      // Bytes that raced in behind the hello stay buffered in the parser and
      // are drained by the reader loop, so nothing is lost.
      FrameParser parser;
      try {
        peer = read_hello(fd, parser);
      } catch (const Error&) {
        ::close(fd);
        continue;
      }
      auto conn = std::make_shared<Conn>();
      conn->fd = fd;
      try {
        register_conn(peer, conn, std::move(parser));
      } catch (const ProtocolError&) {
        ::close(fd);
      }
    }
  }

  /// Blocks until the dialer's REGISTER hello arrives on a fresh socket.
  AgentId read_hello(int fd, FrameParser& parser) {
    char buf[512];
    while (true) {
      if (auto frame = parser.next()) {
        if (frame->msg_type != MsgType::kRegister) {
          throw ProtocolError("connection did not open with a hello");
        }
        auto j = nlohmann::json::parse(frame->payload);
        return j.at("agent").get<AgentId>();
      }
      ssize_t n = ::recv(fd, buf, sizeof buf, 0);
      if (n <= 0) throw ProtocolError("peer hung up before hello");
      parser.feed(buf, static_cast<std::size_t>(n));
    }
  }

  void reader_loop(AgentId peer, std::shared_ptr<Conn> conn,
                   FrameParser parser) {
    std::vector<char> buf(64 * 1024);
    try {
      while (auto frame = parser.next()) {  // leftovers from the hello read
        inbox_.push(Envelope{peer, std::move(*frame)});
      }
    } catch (const ProtocolError&) {
      ::shutdown(conn->fd, SHUT_RDWR);
      return;
    }
    while (true) {
      ssize_t n = ::recv(conn->fd, buf.data(), buf.size(), 0);
      if (n <= 0) return;
      try {
        parser.feed(buf.data(), static_cast<std::size_t>(n));
        while (auto frame = parser.next()) {
          inbox_.push(Envelope{peer, std::move(*frame)});
        }
      } catch (const ProtocolError&) {
        // Corrupt stream: drop the connection; the engine will notice the
        // silence through its liveness checks.
        ::shutdown(conn->fd, SHUT_RDWR);
        return;
      }
    }
  }

  AgentId id_;
  int listen_fd_ = -1;
  std::string listen_address_;

  std::mutex mu_;
  std::condition_variable conn_cv_;
  std::map<AgentId, std::shared_ptr<Conn>> conns_;
  std::vector<std::thread> reader_threads_;
  detail::Inbox inbox_;
  std::thread accept_thread_;
  bool closed_ = false;
};

/// Per-(peer, context) frame sequence bookkeeping: senders stamp an
/// incrementing sequence into every sync frame, receivers verify there are
/// no gaps or reorderings hiding under a FIFO-looking stream.
class WireSequencer {
 public:
  std::uint64_t next_out(AgentId dst, ContextId ctx) {
    return out_[{dst, ctx}]++;
  }

  void accept_in(AgentId sender, ContextId ctx, std::uint64_t seq) {
    std::uint64_t& expected = in_[{sender, ctx}];
    if (seq != expected) {
      throw ProtocolError("frame sequence gap from agent " +
                          std::to_string(sender) + " ctx " +
                          std::to_string(ctx) + ": got " + std::to_string(seq) +
                          " expected " + std::to_string(expected));
    }
    ++expected;
  }

 private:
  std::map<std::pair<AgentId, ContextId>, std::uint64_t> out_;
  std::map<std::pair<AgentId, ContextId>, std::uint64_t> in_;
};

}  // namespace dsim
