#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fednnu/plan.hpp"
#include "fednnu/state_dict.hpp"

namespace fednnu {

using Bytes = std::vector<std::uint8_t>;

// Wire layout, all integers little-endian:
//
//   state dict := u32 layer_count, layer*
//   layer      := u16 name_len, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
//                 u8 rank, u32 dim[rank], values (row-major, LE)
//
//   frame      := "FNNU", u8 version (0x01), u8 msg_type, u32 sender_id,
//                 u32 round, u64 payload_len, payload
enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

Bytes encode_state_dict(const StateDict& sd, Dtype dtype = Dtype::F64);
StateDict decode_state_dict(std::span<const std::uint8_t> bytes, NodeId node_id = 0, std::uint32_t round = 0);

enum class MessageType : std::uint8_t {
  Hello = 0,
  FingerprintSubmit = 1,
  GlobalFingerprintBcast = 2,
  StateDictSubmit = 3,
  AggregateBcast = 4,
  RoundAck = 5,
  Abort = 6,
  Shutdown = 7,
};

const char* to_string(MessageType t);

struct RoundMessage {
  MessageType type = MessageType::Hello;
  NodeId sender_id = 0;
  std::uint32_t round = 0;
  Bytes payload;

  friend bool operator==(const RoundMessage&, const RoundMessage&) = default;
};

inline constexpr std::array<std::uint8_t, 4> kFrameMagic{'F', 'N', 'N', 'U'};
inline constexpr std::uint8_t kProtocolVersion = 0x01;
inline constexpr std::size_t kFrameHeaderSize = 22;
// Sender id the coordinator stamps on its own frames.
inline constexpr NodeId kServerId = 0xFFFFFFFFu;

Bytes frame(const RoundMessage& msg);

struct FrameHeader {
  MessageType type;
  NodeId sender_id;
  std::uint32_t round;
  std::uint64_t payload_len;
};

// Validates magic, version and type. Throws ProtocolError / VersionError.
FrameHeader parse_frame_header(std::span<const std::uint8_t> header);

// Parses exactly one frame from the front of `stream`; `consumed` receives
// the number of bytes used. Throws FramingError on truncation.
RoundMessage unframe(std::span<const std::uint8_t> stream, std::size_t* consumed = nullptr);

// Fingerprint payloads:
//   fingerprint := u32 num_cases, (u32 h, u32 w, f64 sy, f64 sx)*, f64 mean, f64 std
//   global      := fingerprint, u32 n_contrib, u32 node_id*
Bytes encode_fingerprint(const Fingerprint& fp);
Fingerprint decode_fingerprint(std::span<const std::uint8_t> bytes);
Bytes encode_global_fingerprint(const GlobalFingerprint& g);
GlobalFingerprint decode_global_fingerprint(std::span<const std::uint8_t> bytes);

// Hello from a node: u32 num_train_cases (aggregation weight).
// Hello reply from the coordinator: u8 fingerprint_required,
// u32 total_rounds, u32 expected_nodes.
struct HelloReply {
  bool fingerprint_required = false;
  std::uint32_t total_rounds = 0;
  std::uint32_t expected_nodes = 0;

  friend bool operator==(const HelloReply&, const HelloReply&) = default;
};

Bytes encode_node_hello(std::uint32_t num_train_cases);
std::uint32_t decode_node_hello(std::span<const std::uint8_t> bytes);
Bytes encode_hello_reply(const HelloReply& reply);
HelloReply decode_hello_reply(std::span<const std::uint8_t> bytes);

Bytes text_payload(const std::string& text);
std::string payload_text(std::span<const std::uint8_t> bytes);

}  // namespace fednnu
