#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <random>
#include <thread>

#include "fednnu/error.hpp"
#include "fednnu/transport.hpp"

using namespace fednnu;
using namespace std::chrono_literals;

namespace {

RoundMessage msg(MessageType t, NodeId from, std::uint32_t round, Bytes payload = {}) {
  return RoundMessage{t, from, round, std::move(payload)};
}

std::uint16_t closed_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  a.sin_port = 0;
  ::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a);
  socklen_t len = sizeof a;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
  ::close(fd);
  return ntohs(a.sin_port);
}

std::vector<Delivery> scripted_schedule(LatencyModel lat) {
  auto net = SimNetwork::create(lat);
  auto server = net->server_endpoint();
  std::vector<std::unique_ptr<ClientTransport>> nodes;
  for (NodeId k = 1; k <= 4; ++k) nodes.push_back(net->node_endpoint(k));
  for (std::uint32_t r = 0; r < 5; ++r) {
    for (auto& n : nodes) n->send(msg(MessageType::StateDictSubmit, 0, r));
    for (NodeId k = 1; k <= 4; ++k) server->send(k, msg(MessageType::AggregateBcast, kServerId, r));
  }
  return net->schedule();
}

}  // namespace

TEST(SimTransport, PerSenderFifo) {
  auto net = SimNetwork::create();
  auto server = net->server_endpoint();
  auto node = net->node_endpoint(1);
  node->send(msg(MessageType::Hello, 1, 0, {1}));
  node->send(msg(MessageType::FingerprintSubmit, 1, 0, {2}));
  EXPECT_EQ(server->receive(100ms).payload, Bytes{1});
  EXPECT_EQ(server->receive(100ms).payload, Bytes{2});
  EXPECT_EQ(node->messages_sent(), 2u);
}

TEST(SimTransport, ZeroLatencyTiesBreakBySender) {
  auto net = SimNetwork::create();
  auto server = net->server_endpoint();
  auto n3 = net->node_endpoint(3), n1 = net->node_endpoint(1), n2 = net->node_endpoint(2);
  n3->send(msg(MessageType::Hello, 3, 0));
  n1->send(msg(MessageType::Hello, 1, 0));
  n2->send(msg(MessageType::Hello, 2, 0));
  n3->send(msg(MessageType::RoundAck, 3, 0));
  std::vector<std::pair<NodeId, MessageType>> got;
  for (int i = 0; i < 4; ++i) {
    const auto m = server->receive(100ms);
    got.emplace_back(m.sender_id, m.type);
  }
  const std::vector<std::pair<NodeId, MessageType>> expected{
      {1, MessageType::Hello}, {2, MessageType::Hello}, {3, MessageType::Hello}, {3, MessageType::RoundAck}};
  EXPECT_EQ(got, expected);
}

TEST(SimTransport, SeededLatencyReplaysIdentically) {
  const LatencyModel lat{1234, 7};
  const auto a = scripted_schedule(lat), b = scripted_schedule(lat);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, scripted_schedule(LatencyModel{99, 7}));
  // Per (sender, receiver) FIFO holds under delay.
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::pair<std::uint64_t, std::uint64_t>> last;
  for (const auto& d : a) {
    auto it = last.find({d.sender, d.receiver});
    if (it != last.end()) {
      EXPECT_GE(d.arrival, it->second.first);
      EXPECT_GT(d.seq, it->second.second);
    }
    last[{d.sender, d.receiver}] = {d.arrival, d.seq};
  }
}

TEST(SimTransport, LatencyModelIsDeterministicAndBounded) {
  const LatencyModel lat{5, 3};
  for (std::uint64_t s = 0; s < 100; ++s) {
    EXPECT_LE(lat.delay(2, s), 3u);
    EXPECT_EQ(lat.delay(2, s), lat.delay(2, s));
  }
  EXPECT_EQ(LatencyModel{}.delay(1, 1), 0u);
}

TEST(SimTransport, ClosedAndTimeout) {
  auto net = SimNetwork::create();
  auto server = net->server_endpoint();
  auto node = net->node_endpoint(1);
  EXPECT_THROW(server->receive(10ms), TimeoutError);
  node->close();
  EXPECT_THROW(node->send(msg(MessageType::Hello, 1, 0)), ChannelClosedError);
  EXPECT_THROW(node->receive(10ms), ChannelClosedError);
  EXPECT_THROW(server->send(1, msg(MessageType::Shutdown, kServerId, 0)), ChannelClosedError);
  EXPECT_THROW(net->node_endpoint(kServerId), UsageError);
}

TEST(TcpTransport, ParseAddress) {
  const Address a = parse_address("10.0.0.2:8080");
  EXPECT_EQ(a.host, "10.0.0.2");
  EXPECT_EQ(a.port, 8080);
  EXPECT_THROW(parse_address("nohost"), Error);
  EXPECT_THROW(parse_address("h:70000"), Error);
  EXPECT_THROW(parse_address("h:x1"), Error);
}

TEST(TcpTransport, LoopbackRoundTripAndFifo) {
  TcpServerTransport server(Address{"127.0.0.1", 0}, 2);
  ASSERT_NE(server.port(), 0);
  TcpClientTransport c1(Address{"127.0.0.1", server.port()}, 2000ms);
  TcpClientTransport c2(Address{"127.0.0.1", server.port()}, 2000ms);
  Bytes big(1 << 20);
  std::mt19937_64 rng(1);
  for (auto& b : big) b = static_cast<std::uint8_t>(rng());
  for (std::uint32_t i = 0; i < 20; ++i) c1.send(msg(MessageType::RoundAck, 1, i));
  c2.send(msg(MessageType::StateDictSubmit, 2, 0, big));
  std::uint32_t next = 0;
  bool got_big = false;
  for (int i = 0; i < 21; ++i) {
    const RoundMessage m = server.receive(5000ms);
    if (m.sender_id == 1) {
      EXPECT_EQ(m.round, next++);
    } else {
      EXPECT_EQ(m.payload, big);
      got_big = true;
    }
  }
  EXPECT_TRUE(got_big);
  server.send(2, msg(MessageType::AggregateBcast, kServerId, 0, {9, 8}));
  server.send(1, msg(MessageType::Shutdown, kServerId, 20));
  EXPECT_EQ(c2.receive(5000ms).payload, (Bytes{9, 8}));
  EXPECT_EQ(c1.receive(5000ms).type, MessageType::Shutdown);
  EXPECT_EQ(c1.messages_sent(), 20u);
  EXPECT_EQ(server.messages_sent(), 2u);
  EXPECT_THROW(server.send(7, msg(MessageType::Shutdown, kServerId, 0)), Error);
}

TEST(TcpTransport, ClientSeesClosedServer) {
  auto server = std::make_unique<TcpServerTransport>(Address{"127.0.0.1", 0}, 1);
  TcpClientTransport c(Address{"127.0.0.1", server->port()}, 2000ms);
  c.send(msg(MessageType::Hello, 1, 0));
  EXPECT_EQ(server->receive(5000ms).type, MessageType::Hello);
  server->close();
  server.reset();
  EXPECT_THROW(c.receive(5000ms), Error);
}

TEST(TcpTransport, ReceiveTimesOut) {
  TcpServerTransport server(Address{"127.0.0.1", 0}, 1);
  TcpClientTransport c(Address{"127.0.0.1", server.port()}, 2000ms);
  EXPECT_THROW(c.receive(50ms), TimeoutError);
  EXPECT_THROW(server.receive(50ms), TimeoutError);
}

TEST(TcpTransport, RefusedConnectionIsConnectionError) {
  const std::uint16_t port = closed_port();
  EXPECT_THROW(TcpClientTransport(Address{"127.0.0.1", port}, 0ms), ConnectionError);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(TcpClientTransport(Address{"127.0.0.1", port}, 300ms), ConnectionError);
  EXPECT_GE(std::chrono::steady_clock::now() - start, 250ms);
}

TEST(TcpTransport, BadMagicFromPeerIsProtocolError) {
  TcpServerTransport server(Address{"127.0.0.1", 0}, 1);
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  a.sin_port = htons(server.port());
  ASSERT_EQ(::connect(fd, reinterpret_cast<sockaddr*>(&a), sizeof a), 0);
  Bytes junk = frame(msg(MessageType::Hello, 1, 0));
  junk[0] = 'X';
  write_all(fd, junk);
  EXPECT_THROW(server.receive(5000ms), ProtocolError);
  ::close(fd);
}
