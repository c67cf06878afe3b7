#include <algorithm>

#include "fednnu/error.hpp"
#include "fednnu/transport.hpp"

namespace fednnu {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class SimServerEndpoint : public ServerTransport {
 public:
  explicit SimServerEndpoint(std::shared_ptr<SimNetwork> net) : net_(std::move(net)) {}
  ~SimServerEndpoint() override { close(); }

  void send(NodeId to, const RoundMessage& msg) override {
    net_->post(kServerId, to, msg);
    ++sent_;
  }
  RoundMessage receive(Millis timeout) override { return net_->take(kServerId, timeout); }
  void close() override { net_->close_address(kServerId); }
  std::uint64_t messages_sent() const override { return sent_.load(); }

 private:
  std::shared_ptr<SimNetwork> net_;
  std::atomic<std::uint64_t> sent_{0};
};

class SimNodeEndpoint : public ClientTransport {
 public:
  SimNodeEndpoint(std::shared_ptr<SimNetwork> net, NodeId node) : net_(std::move(net)), node_(node) {}
  ~SimNodeEndpoint() override { close(); }

  void send(const RoundMessage& msg) override {
    net_->post(node_, kServerId, msg);
    ++sent_;
  }
  RoundMessage receive(Millis timeout) override { return net_->take(node_, timeout); }
  void close() override { net_->close_address(node_); }
  std::uint64_t messages_sent() const override { return sent_.load(); }

 private:
  std::shared_ptr<SimNetwork> net_;
  NodeId node_;
  std::atomic<std::uint64_t> sent_{0};
};

}  // namespace

std::uint64_t LatencyModel::delay(std::uint32_t sender, std::uint64_t seq) const {
  if (max_delay == 0) return 0;
  const std::uint64_t h = splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(sender) << 32) ^ seq));
  return h % (static_cast<std::uint64_t>(max_delay) + 1);
}

std::shared_ptr<SimNetwork> SimNetwork::create(LatencyModel latency) {
  return std::shared_ptr<SimNetwork>(new SimNetwork(latency));
}

std::unique_ptr<ServerTransport> SimNetwork::server_endpoint() {
  return std::make_unique<SimServerEndpoint>(shared_from_this());
}

std::unique_ptr<ClientTransport> SimNetwork::node_endpoint(NodeId node) {
  if (node == kServerId) throw UsageError("node id collides with the server address");
  return std::make_unique<SimNodeEndpoint>(shared_from_this(), node);
}

void SimNetwork::post(std::uint32_t from, std::uint32_t to, const RoundMessage& msg) {
  Bytes bytes = frame(msg);
  std::lock_guard lock(mu_);
  if (closed_.count(from) != 0) throw ChannelClosedError("send on closed endpoint " + std::to_string(from));
  if (closed_.count(to) != 0) throw ChannelClosedError("peer " + std::to_string(to) + " has closed");
  const std::uint64_t seq = send_counter_[from]++;
  std::uint64_t arrival = seq + latency_.delay(from, seq);
  auto& last = last_arrival_[{from, to}];
  arrival = std::max(arrival, last);
  last = arrival;
  inboxes_[to].insert(Pending{arrival, from, seq, std::move(bytes)});
  log_.push_back(Delivery{arrival, from, to, seq, msg.type});
  ++sent_;
  cv_.notify_all();
}

RoundMessage SimNetwork::take(std::uint32_t address, Millis timeout) {
  std::unique_lock lock(mu_);
  auto& inbox = inboxes_[address];
  const bool ready = cv_.wait_for(lock, timeout, [&] { return !inbox.empty() || closed_.count(address) != 0; });
  if (!inbox.empty()) {
    auto node = inbox.extract(inbox.begin());
    lock.unlock();
    return unframe(node.value().bytes);
  }
  if (ready) throw ChannelClosedError("receive on closed endpoint " + std::to_string(address));
  throw TimeoutError("no message for " + std::to_string(address) + " within " + std::to_string(timeout.count()) +
                     " ms");
}

void SimNetwork::close_address(std::uint32_t address) {
  std::lock_guard lock(mu_);
  closed_.insert(address);
  cv_.notify_all();
}

std::vector<Delivery> SimNetwork::schedule() const {
  std::lock_guard lock(mu_);
  std::vector<Delivery> out = log_;
  std::sort(out.begin(), out.end(), [](const Delivery& a, const Delivery& b) {
    return std::tie(a.receiver, a.arrival, a.sender, a.seq) < std::tie(b.receiver, b.arrival, b.sender, b.seq);
  });
  return out;
}

std::uint64_t SimNetwork::messages_sent() const {
  std::lock_guard lock(mu_);
  return sent_;
}

}  // namespace fednnu
