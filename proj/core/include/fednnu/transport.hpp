#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "fednnu/wire.hpp"

namespace fednnu {

using Millis = std::chrono::milliseconds;

// A node's link to the coordinator.
class ClientTransport {
 public:
  virtual ~ClientTransport() = default;
  virtual void send(const RoundMessage& msg) = 0;
  // Throws TimeoutError, ChannelClosedError, or a protocol error.
  virtual RoundMessage receive(Millis timeout) = 0;
  virtual void close() = 0;
  virtual std::uint64_t messages_sent() const = 0;
};

// The coordinator's side: one channel per node, multiplexed into a single
// receive queue. Node channels are addressed by the sender id carried in
// their frames.
class ServerTransport {
 public:
  virtual ~ServerTransport() = default;
  virtual void send(NodeId to, const RoundMessage& msg) = 0;
  virtual RoundMessage receive(Millis timeout) = 0;
  virtual void close() = 0;
  virtual std::uint64_t messages_sent() const = 0;
};

// ---------------------------------------------------------------------------
// In-process carrier.

// Seeded per-message delay in logical ticks; max_delay == 0 is zero latency.
struct LatencyModel {
  std::uint64_t seed = 0;
  std::uint32_t max_delay = 0;

  std::uint64_t delay(std::uint32_t sender, std::uint64_t seq) const;
};

// One delivered message as seen by the schedule log.
struct Delivery {
  std::uint64_t arrival = 0;
  std::uint32_t sender = 0;
  std::uint32_t receiver = 0;
  std::uint64_t seq = 0;
  MessageType type = MessageType::Hello;

  friend auto operator<=>(const Delivery&, const Delivery&) = default;
};

// Simulated network. Every message is framed to bytes on send and unframed
// on receive. Each sender stamps its k-th message with logical send time k;
// arrival = send time + delay, raised if needed so a sender's messages never
// overtake each other. Each inbox pops in (arrival, sender, seq) order.
class SimNetwork : public std::enable_shared_from_this<SimNetwork> {
 public:
  static std::shared_ptr<SimNetwork> create(LatencyModel latency = {});

  std::unique_ptr<ServerTransport> server_endpoint();
  std::unique_ptr<ClientTransport> node_endpoint(NodeId node);

  // Every enqueued message in (receiver, arrival, sender, seq) order.
  std::vector<Delivery> schedule() const;
  std::uint64_t messages_sent() const;

  // Internal API for endpoints.
  void post(std::uint32_t from, std::uint32_t to, const RoundMessage& msg);
  RoundMessage take(std::uint32_t address, Millis timeout);
  void close_address(std::uint32_t address);

 private:
  explicit SimNetwork(LatencyModel latency) : latency_(latency) {}

  struct Pending {
    std::uint64_t arrival;
    std::uint32_t sender;
    std::uint64_t seq;
    Bytes bytes;
    bool operator<(const Pending& o) const {
      return std::tie(arrival, sender, seq) < std::tie(o.arrival, o.sender, o.seq);
    }
  };

  LatencyModel latency_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::uint32_t, std::set<Pending>> inboxes_;
  std::map<std::uint32_t, std::uint64_t> send_counter_;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> last_arrival_;
  std::set<std::uint32_t> closed_;
  std::vector<Delivery> log_;
  std::uint64_t sent_ = 0;
};

// ---------------------------------------------------------------------------
// TCP carrier (POSIX sockets, blocking I/O).

struct Address {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

// Parses "host:port".
Address parse_address(const std::string& text);

class TcpServerTransport : public ServerTransport {
 public:
  // Binds and listens; port 0 picks an ephemeral port. Accepts up to
  // max_connections in the background.
  TcpServerTransport(const Address& bind, std::size_t max_connections);
  ~TcpServerTransport() override;

  std::uint16_t port() const { return port_; }

  void send(NodeId to, const RoundMessage& msg) override;
  RoundMessage receive(Millis timeout) override;
  void close() override;
  std::uint64_t messages_sent() const override { return sent_.load(); }

 private:
  struct Connection {
    int fd = -1;
    std::mutex write_mu;
    std::thread reader;
  };
  struct Event {
    RoundMessage msg;
    std::exception_ptr error;
  };

  void accept_loop(std::size_t max_connections);
  void read_loop(Connection* conn);
  void push(Event ev);

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::thread acceptor_;
  std::atomic<bool> closing_{false};

  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::unique_ptr<Connection>> connections_;
  std::map<NodeId, Connection*> routes_;
  std::vector<Event> inbox_;
  std::size_t inbox_head_ = 0;
  std::atomic<std::uint64_t> sent_{0};
};

class TcpClientTransport : public ClientTransport {
 public:
  // Retries refused connections until connect_timeout elapses, then throws
  // ConnectionError.
  TcpClientTransport(const Address& server, Millis connect_timeout = Millis(0));
  ~TcpClientTransport() override;

  void send(const RoundMessage& msg) override;
  RoundMessage receive(Millis timeout) override;
  void close() override;
  std::uint64_t messages_sent() const override { return sent_.load(); }

 private:
  int fd_ = -1;
  std::atomic<std::uint64_t> sent_{0};
};

// Blocking helpers shared by the TCP carriers and tests.
void write_all(int fd, std::span<const std::uint8_t> bytes);
// Reads one frame; throws ChannelClosedError on EOF before any header byte.
RoundMessage read_frame(int fd);

}  // namespace fednnu
