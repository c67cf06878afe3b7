#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "fednnu/error.hpp"
#include "fednnu/transport.hpp"

namespace fednnu {
namespace {

sockaddr_in make_sockaddr(const Address& addr) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(addr.port);
  std::string host = addr.host == "localhost" ? "127.0.0.1" : addr.host;
  if (inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) {
    throw UsageError("not an IPv4 address: '" + addr.host + "'");
  }
  return sa;
}

// Reads exactly n bytes. Returns the count read before EOF.
std::size_t read_exact(int fd, std::uint8_t* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r == 0) return got;
    if (r < 0) {
      if (errno == EINTR) continue;
      if (errno == ECONNRESET || errno == EBADF || errno == ENOTCONN) return got;
      throw ChannelClosedError(std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return got;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

Address parse_address(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw UsageError("address must be host:port, got '" + text + "'");
  }
  Address a;
  a.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  unsigned long p = 0;
  try {
    std::size_t used = 0;
    p = std::stoul(port, &used);
    if (used != port.size()) throw std::invalid_argument("junk");
  } catch (const std::exception&) {
    throw UsageError("bad port in '" + text + "'");
  }
  if (p > 65535) throw UsageError("port out of range in '" + text + "'");
  a.port = static_cast<std::uint16_t>(p);
  return a;
}

void write_all(int fd, std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t r = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ChannelClosedError(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(r);
  }
}

RoundMessage read_frame(int fd) {
  std::uint8_t header[kFrameHeaderSize];
  const std::size_t got = read_exact(fd, header, kFrameHeaderSize);
  if (got == 0) throw ChannelClosedError("peer closed the connection");
  if (got < kFrameHeaderSize) throw FramingError("connection closed inside a frame header");
  const FrameHeader h = parse_frame_header(header);
  RoundMessage msg;
  msg.type = h.type;
  msg.sender_id = h.sender_id;
  msg.round = h.round;
  msg.payload.resize(static_cast<std::size_t>(h.payload_len));
  if (read_exact(fd, msg.payload.data(), msg.payload.size()) != msg.payload.size()) {
    throw FramingError("connection closed inside a frame payload");
  }
  return msg;
}

// ---------------------------------------------------------------------------

TcpServerTransport::TcpServerTransport(const Address& bind, std::size_t max_connections) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw ConnectionError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in sa = make_sockaddr(bind);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0 || ::listen(listen_fd_, 64) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw ConnectionError("cannot listen on " + bind.host + ":" + std::to_string(bind.port) + ": " + why);
  }
  socklen_t len = sizeof(sa);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  port_ = ntohs(sa.sin_port);
  acceptor_ = std::thread([this, max_connections] { accept_loop(max_connections); });
}

TcpServerTransport::~TcpServerTransport() { close(); }

void TcpServerTransport::accept_loop(std::size_t max_connections) {
  std::size_t accepted = 0;
  while (!closing_.load() && accepted < max_connections) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, 50);
    if (r <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    set_nodelay(fd);
    auto conn = std::make_unique<Connection>();
    conn->fd = fd;
    Connection* raw = conn.get();
    {
      std::lock_guard lock(mu_);
      connections_.push_back(std::move(conn));
    }
    raw->reader = std::thread([this, raw] { read_loop(raw); });
    ++accepted;
  }
}

void TcpServerTransport::read_loop(Connection* conn) {
  bool routed = false;
  NodeId node = 0;
  for (;;) {
    try {
      RoundMessage msg = read_frame(conn->fd);
      if (!routed) {
        std::lock_guard lock(mu_);
        auto [it, fresh] = routes_.emplace(msg.sender_id, conn);
        if (!fresh && it->second != conn) {
          throw ProtocolError("node " + std::to_string(msg.sender_id) + " connected twice");
        }
        routed = true;
        node = msg.sender_id;
      } else if (msg.sender_id != node) {
        throw ProtocolError("connection of node " + std::to_string(node) + " sent a frame as node " +
                            std::to_string(msg.sender_id));
      }
      push(Event{std::move(msg), nullptr});
    } catch (const ChannelClosedError& e) {
      if (closing_.load()) return;
      const std::string who = routed ? "node " + std::to_string(node) : std::string("unregistered peer");
      push(Event{{}, std::make_exception_ptr(ChannelClosedError(who + ": " + e.what()))});
      return;
    } catch (...) {
      if (closing_.load()) return;
      push(Event{{}, std::current_exception()});
      return;
    }
  }
}

void TcpServerTransport::push(Event ev) {
  std::lock_guard lock(mu_);
  inbox_.push_back(std::move(ev));
  cv_.notify_all();
}

void TcpServerTransport::send(NodeId to, const RoundMessage& msg) {
  Connection* conn = nullptr;
  {
    std::lock_guard lock(mu_);
    auto it = routes_.find(to);
    if (it == routes_.end()) throw ChannelClosedError("no connection for node " + std::to_string(to));
    conn = it->second;
  }
  const Bytes bytes = frame(msg);
  std::lock_guard wlock(conn->write_mu);
  write_all(conn->fd, bytes);
  ++sent_;
}

RoundMessage TcpServerTransport::receive(Millis timeout) {
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, timeout, [&] { return inbox_head_ < inbox_.size(); })) {
    throw TimeoutError("server received nothing within " + std::to_string(timeout.count()) + " ms");
  }
  Event ev = std::move(inbox_[inbox_head_++]);
  lock.unlock();
  if (ev.error) std::rethrow_exception(ev.error);
  return std::move(ev.msg);
}

void TcpServerTransport::close() {
  if (closing_.exchange(true)) return;
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<Connection*> conns;
  {
    std::lock_guard lock(mu_);
    for (auto& c : connections_) conns.push_back(c.get());
  }
  for (auto* c : conns) ::shutdown(c->fd, SHUT_RDWR);
  for (auto* c : conns) {
    if (c->reader.joinable()) c->reader.join();
    ::close(c->fd);
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
}

// ---------------------------------------------------------------------------

TcpClientTransport::TcpClientTransport(const Address& server, Millis connect_timeout) {
  const sockaddr_in sa = make_sockaddr(server);
  const auto deadline = std::chrono::steady_clock::now() + connect_timeout;
  for (;;) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ConnectionError(std::string("socket: ") + std::strerror(errno));
    if (::connect(fd_, reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) == 0) break;
    const int err = errno;
    ::close(fd_);
    fd_ = -1;
    if (std::chrono::steady_clock::now() >= deadline) {
      throw ConnectionError("cannot connect to " + server.host + ":" + std::to_string(server.port) + ": " +
                            std::strerror(err));
    }
    std::this_thread::sleep_for(Millis(50));
  }
  set_nodelay(fd_);
}

TcpClientTransport::~TcpClientTransport() { close(); }

void TcpClientTransport::send(const RoundMessage& msg) {
  if (fd_ < 0) throw ChannelClosedError("send on closed connection");
  write_all(fd_, frame(msg));
  ++sent_;
}

RoundMessage TcpClientTransport::receive(Millis timeout) {
  if (fd_ < 0) throw ChannelClosedError("receive on closed connection");
  pollfd p{fd_, POLLIN, 0};
  const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (r == 0) throw TimeoutError("no message from server within " + std::to_string(timeout.count()) + " ms");
  if (r < 0) throw ChannelClosedError(std::string("poll failed: ") + std::strerror(errno));
  return read_frame(fd_);
}

void TcpClientTransport::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

}  // namespace fednnu
