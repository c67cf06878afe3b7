#include "fednnu/wire.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>

#include "fednnu/error.hpp"

namespace fednnu {
namespace {

static_assert(sizeof(double) == 8 && sizeof(float) == 4);

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::span<const std::uint8_t> b) {
    const std::size_t at = out_.size();
    out_.resize(at + b.size());
    if (!b.empty()) std::memcpy(out_.data() + at, b.data(), b.size());
  }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in, const char* what) : in_(in), what_(what) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  void finish() const {
    if (remaining() != 0) {
      throw EncodingError(std::string(what_) + ": " + std::to_string(remaining()) + " trailing bytes");
    }
  }
  void need(std::size_t n) const {
    if (remaining() < n) throw EncodingError(std::string(what_) + ": truncated");
  }

 private:
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  const char* what_;
};

void write_fingerprint(Writer& w, const Fingerprint& fp) {
  w.u32(fp.num_cases);
  for (std::size_t i = 0; i < fp.num_cases; ++i) {
    w.u32(fp.shapes_after_crop.at(i)[0]);
    w.u32(fp.shapes_after_crop.at(i)[1]);
    w.f64(fp.spacings.at(i)[0]);
    w.f64(fp.spacings.at(i)[1]);
  }
  w.f64(fp.intensity_mean);
  w.f64(fp.intensity_std);
}

Fingerprint read_fingerprint(Reader& r) {
  Fingerprint fp;
  fp.num_cases = r.u32();
  r.need(static_cast<std::size_t>(fp.num_cases) * 24);
  for (std::uint32_t i = 0; i < fp.num_cases; ++i) {
    const auto h = r.u32();
    const auto w = r.u32();
    fp.shapes_after_crop.push_back({h, w});
    const double sy = r.f64();
    const double sx = r.f64();
    fp.spacings.push_back({sy, sx});
  }
  fp.intensity_mean = r.f64();
  fp.intensity_std = r.f64();
  try {
    fp.validate();
  } catch (const UsageError& e) {
    throw EncodingError(std::string("fingerprint payload: ") + e.what());
  }
  return fp;
}

}  // namespace

const char* to_string(MessageType t) {
  switch (t) {
    case MessageType::Hello: return "Hello";
    case MessageType::FingerprintSubmit: return "FingerprintSubmit";
    case MessageType::GlobalFingerprintBcast: return "GlobalFingerprintBcast";
    case MessageType::StateDictSubmit: return "StateDictSubmit";
    case MessageType::AggregateBcast: return "AggregateBcast";
    case MessageType::RoundAck: return "RoundAck";
    case MessageType::Abort: return "Abort";
    case MessageType::Shutdown: return "Shutdown";
  }
  return "Unknown";
}

Bytes encode_state_dict(const StateDict& sd, Dtype dtype) {
  Bytes out;
  Writer w(out);
  w.u32(static_cast<std::uint32_t>(sd.size()));
  for (const auto& [id, tensor] : sd.entries()) {
    const std::string name = id.str();
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw EncodingError("layer name longer than 65535 bytes");
    }
    if (tensor.rank() > std::numeric_limits<std::uint8_t>::max()) throw EncodingError("tensor rank above 255");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw({reinterpret_cast<const std::uint8_t*>(name.data()), name.size()});
    w.u8(static_cast<std::uint8_t>(dtype));
    w.u8(static_cast<std::uint8_t>(tensor.rank()));
    for (auto d : tensor.dims()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw EncodingError("tensor dim above 2^32-1");
      w.u32(static_cast<std::uint32_t>(d));
    }
    if (dtype == Dtype::F64) {
      for (double v : tensor.values()) w.f64(v);
    } else {
      for (double v : tensor.values()) w.f32(static_cast<float>(v));
    }
  }
  return out;
}

StateDict decode_state_dict(std::span<const std::uint8_t> bytes, NodeId node_id, std::uint32_t round) {
  Reader r(bytes, "state dict");
  StateDict sd(node_id, round);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    auto name_bytes = r.take(len);
    const std::string name(name_bytes.begin(), name_bytes.end());
    auto id = LayerId::try_parse(name);
    if (!id) throw EncodingError("state dict: invalid layer name '" + name + "'");
    const std::uint8_t dtype = r.u8();
    if (dtype > 1) throw EncodingError("state dict: unknown dtype " + std::to_string(dtype));
    const std::uint8_t rank = r.u8();
    Shape dims;
    std::size_t numel = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::uint32_t d = r.u32();
      if (d == 0) throw EncodingError("state dict: zero dim in " + name);
      dims.push_back(d);
      numel *= d;
    }
    const std::size_t width = dtype == 1 ? 8 : 4;
    if (numel > r.remaining() / width) throw EncodingError("state dict: truncated values for " + name);
    std::vector<double> values(numel);
    for (std::size_t k = 0; k < numel; ++k) values[k] = dtype == 1 ? r.f64() : static_cast<double>(r.f32());
    if (sd.contains(*id)) throw EncodingError("state dict: duplicate layer " + name);
    sd.insert(*id, Tensor(std::move(dims), std::move(values)));
  }
  r.finish();
  return sd;
}

Bytes frame(const RoundMessage& msg) {
  if (msg.payload.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw EncodingError("payload exceeds 2^32-1 bytes");
  }
  if (static_cast<std::uint8_t>(msg.type) > static_cast<std::uint8_t>(MessageType::Shutdown)) {
    throw EncodingError("unknown message type");
  }
  Bytes out;
  out.reserve(kFrameHeaderSize + msg.payload.size());
  Writer w(out);
  w.raw(kFrameMagic);
  w.u8(kProtocolVersion);
  w.u8(static_cast<std::uint8_t>(msg.type));
  w.u32(msg.sender_id);
  w.u32(msg.round);
  w.u64(msg.payload.size());
  w.raw(msg.payload);
  return out;
}

FrameHeader parse_frame_header(std::span<const std::uint8_t> header) {
  if (header.size() < kFrameHeaderSize) throw FramingError("truncated frame header");
  if (!std::equal(kFrameMagic.begin(), kFrameMagic.end(), header.begin())) {
    throw ProtocolError("bad frame magic");
  }
  if (header[4] != kProtocolVersion) {
    throw VersionError("unsupported protocol version " + std::to_string(header[4]));
  }
  if (header[5] > static_cast<std::uint8_t>(MessageType::Shutdown)) {
    throw ProtocolError("unknown message type " + std::to_string(header[5]));
  }
  Reader r(header.subspan(6, kFrameHeaderSize - 6), "frame header");
  FrameHeader h;
  h.type = static_cast<MessageType>(header[5]);
  h.sender_id = r.u32();
  h.round = r.u32();
  h.payload_len = r.u64();
  if (h.payload_len > std::numeric_limits<std::uint32_t>::max()) {
    throw ProtocolError("frame payload length above 2^32-1");
  }
  return h;
}

RoundMessage unframe(std::span<const std::uint8_t> stream, std::size_t* consumed) {
  const FrameHeader h = parse_frame_header(stream);
  if (stream.size() - kFrameHeaderSize < h.payload_len) {
    throw FramingError("truncated frame: declared " + std::to_string(h.payload_len) + " payload bytes, have " +
                       std::to_string(stream.size() - kFrameHeaderSize));
  }
  RoundMessage msg;
  msg.type = h.type;
  msg.sender_id = h.sender_id;
  msg.round = h.round;
  auto payload = stream.subspan(kFrameHeaderSize, static_cast<std::size_t>(h.payload_len));
  msg.payload.assign(payload.begin(), payload.end());
  if (consumed != nullptr) *consumed = kFrameHeaderSize + static_cast<std::size_t>(h.payload_len);
  return msg;
}

Bytes encode_fingerprint(const Fingerprint& fp) {
  Bytes out;
  Writer w(out);
  write_fingerprint(w, fp);
  return out;
}

Fingerprint decode_fingerprint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "fingerprint");
  Fingerprint fp = read_fingerprint(r);
  r.finish();
  return fp;
}

Bytes encode_global_fingerprint(const GlobalFingerprint& g) {
  Bytes out;
  Writer w(out);
  write_fingerprint(w, g.fingerprint);
  w.u32(static_cast<std::uint32_t>(g.contributor_order.size()));
  for (auto id : g.contributor_order) w.u32(id);
  return out;
}

GlobalFingerprint decode_global_fingerprint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "global fingerprint");
  GlobalFingerprint g;
  g.fingerprint = read_fingerprint(r);
  const std::uint32_t n = r.u32();
  r.need(static_cast<std::size_t>(n) * 4);
  for (std::uint32_t i = 0; i < n; ++i) g.contributor_order.push_back(r.u32());
  r.finish();
  return g;
}

Bytes encode_node_hello(std::uint32_t num_train_cases) {
  Bytes out;
  Writer(out).u32(num_train_cases);
  return out;
}

std::uint32_t decode_node_hello(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return 0;
  Reader r(bytes, "hello");
  const auto n = r.u32();
  r.finish();
  return n;
}

Bytes encode_hello_reply(const HelloReply& reply) {
  Bytes out;
  Writer w(out);
  w.u8(reply.fingerprint_required ? 1 : 0);
  w.u32(reply.total_rounds);
  w.u32(reply.expected_nodes);
  return out;
}

HelloReply decode_hello_reply(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "hello reply");
  HelloReply h;
  const auto flag = r.u8();
  if (flag > 1) throw EncodingError("hello reply: bad fingerprint flag");
  h.fingerprint_required = flag == 1;
  h.total_rounds = r.u32();
  h.expected_nodes = r.u32();
  r.finish();
  return h;
}

Bytes text_payload(const std::string& text) { return Bytes(text.begin(), text.end()); }

std::string payload_text(std::span<const std::uint8_t> bytes) { return std::string(bytes.begin(), bytes.end()); }

}  // namespace fednnu
