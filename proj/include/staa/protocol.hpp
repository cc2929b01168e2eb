#pragma once

// Framed wire protocol of the explanation service.
//
// Frame:   "SXAI" | version u8 (=1) | type u8 | payload_len u32 | payload
// Types:   0 batch, 1 explanation, 2 error, 3 shutdown
// Integers are big-endian; floats are IEEE-754 binary64, big-endian.
//
// batch:        batch_id u64 | F u16 | H u16 | W u16 | send_timestamp_us u64 |
//               F*H*W*3 pixel bytes (raw clip layout)
// explanation:  batch_id u64 | predicted_class u32 | probability f64 | F u16 |
//               N u16 | M_t F x f64 | M_s N*F x f64 (frame-major, t*N+p) |
//               server_process_us u64
// error:        code u16 | batch_id u64 (0 when unknown) | UTF-8 message
// shutdown:     empty

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "staa/error.hpp"

namespace staa::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic = {'S', 'X', 'A', 'I'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MessageType : std::uint8_t {
  kBatch = 0,
  kExplanation = 1,
  kError = 2,
  kShutdown = 3,
};

enum class ErrorCode : std::uint16_t {
  kBadMagic = 1,
  kBadVersion = 2,
  kUnknownType = 3,
  kBadLength = 4,
  kShapeMismatch = 5,
  kDropped = 6,
  kInternal = 7,
  kOversize = 8,
};

class ProtocolError : public Error {
 public:
  ProtocolError(ErrorCode code, const std::string& what)
      : Error(ErrorKind::kProtocol, what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct Header {
  std::uint8_t version = kVersion;
  MessageType type = MessageType::kBatch;
  std::uint32_t payload_len = 0;
};

struct Message {
  MessageType type = MessageType::kBatch;
  std::vector<std::uint8_t> payload;

  bool operator==(const Message&) const = default;
};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { be(v, 2); }
  void u32(std::uint32_t v) { be(v, 4); }
  void u64(std::uint64_t v) { be(v, 8); }
  void f64(double v) { be(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void be(std::uint64_t v, int n) {
    for (int i = n - 1; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(be(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(be(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(be(4)); }
  std::uint64_t u64() { return be(8); }
  double f64() { return std::bit_cast<double>(be(8)); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      std::ostringstream os;
      os << "payload truncated: need " << n << " more bytes, have " << remaining();
      throw ProtocolError(ErrorCode::kBadLength, os.str());
    }
  }
  std::uint64_t be(int n) {
    need(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | in_[pos_++];
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> encode(const Message& m) {
  if (m.payload.size() > kMaxPayload) {
    throw ProtocolError(ErrorCode::kOversize, "payload exceeds the 64 MiB frame limit");
  }
  Writer w;
  w.bytes(kMagic);
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(m.type));
  w.u32(static_cast<std::uint32_t>(m.payload.size()));
  w.bytes(m.payload);
  return w.take();
}

// Validates magic, version, type and size limit.
inline Header decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) {
    throw ProtocolError(ErrorCode::kBadLength, "frame shorter than the 10-byte header");
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw ProtocolError(ErrorCode::kBadMagic, "bad magic, expected \"SXAI\"");
  }
  Reader r(bytes.subspan(4, 6));
  Header h;
  h.version = r.u8();
  const std::uint8_t type = r.u8();
  h.payload_len = r.u32();
  if (h.version != kVersion) {
    throw ProtocolError(ErrorCode::kBadVersion, "unsupported protocol version " + std::to_string(h.version));
  }
  if (type > static_cast<std::uint8_t>(MessageType::kShutdown)) {
    throw ProtocolError(ErrorCode::kUnknownType, "unknown message type " + std::to_string(type));
  }
  h.type = static_cast<MessageType>(type);
  if (h.payload_len > kMaxPayload) {
    throw ProtocolError(ErrorCode::kOversize, "payload length " + std::to_string(h.payload_len) +
                                                  " exceeds the frame limit");
  }
  return h;
}

// Decodes exactly one complete frame.
inline Message decode(std::span<const std::uint8_t> bytes) {
  const Header h = decode_header(bytes);
  if (bytes.size() - kHeaderSize != h.payload_len) {
    std::ostringstream os;
    os << "header announces " << h.payload_len << " payload bytes, frame carries "
       << bytes.size() - kHeaderSize;
    throw ProtocolError(ErrorCode::kBadLength, os.str());
  }
  auto body = bytes.subspan(kHeaderSize);
  return {h.type, std::vector<std::uint8_t>(body.begin(), body.end())};
}

struct BatchPayload {
  std::uint64_t batch_id = 0;
  std::uint16_t frames = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint64_t send_timestamp_us = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const BatchPayload&) const = default;
};

struct ExplanationPayload {
  std::uint64_t batch_id = 0;
  std::uint32_t predicted_class = 0;
  double probability = 0.0;
  std::uint16_t frames = 0;
  std::uint16_t patches = 0;
  std::vector<double> temporal;  // F
  std::vector<double> spatial;   // N * F, frame-major
  std::uint64_t server_process_us = 0;

  bool operator==(const ExplanationPayload&) const = default;
};

struct ErrorPayload {
  ErrorCode code = ErrorCode::kInternal;
  std::uint64_t batch_id = 0;
  std::string message;

  bool operator==(const ErrorPayload&) const = default;
};

inline Message encode_batch(const BatchPayload& b) {
  if (b.pixels.size() != static_cast<std::size_t>(b.frames) * b.height * b.width * 3) {
    throw ProtocolError(ErrorCode::kBadLength, "batch pixel count does not match F*H*W*3");
  }
  Writer w;
  w.u64(b.batch_id);
  w.u16(b.frames);
  w.u16(b.height);
  w.u16(b.width);
  w.u64(b.send_timestamp_us);
  w.bytes(b.pixels);
  return {MessageType::kBatch, w.take()};
}

inline BatchPayload decode_batch(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  BatchPayload b;
  b.batch_id = r.u64();
  b.frames = r.u16();
  b.height = r.u16();
  b.width = r.u16();
  b.send_timestamp_us = r.u64();
  const std::size_t expected = static_cast<std::size_t>(b.frames) * b.height * b.width * 3;
  if (r.remaining() != expected) {
    std::ostringstream os;
    os << "batch " << b.batch_id << " carries " << r.remaining() << " pixel bytes, F*H*W*3 = "
       << expected;
    throw ProtocolError(ErrorCode::kBadLength, os.str());
  }
  auto px = r.bytes(expected);
  b.pixels.assign(px.begin(), px.end());
  return b;
}

inline Message encode_explanation(const ExplanationPayload& e) {
  if (e.temporal.size() != e.frames ||
      e.spatial.size() != static_cast<std::size_t>(e.frames) * e.patches) {
    throw ProtocolError(ErrorCode::kBadLength, "explanation map sizes do not match F and N");
  }
  Writer w;
  w.u64(e.batch_id);
  w.u32(e.predicted_class);
  w.f64(e.probability);
  w.u16(e.frames);
  w.u16(e.patches);
  for (double v : e.temporal) w.f64(v);
  for (double v : e.spatial) w.f64(v);
  w.u64(e.server_process_us);
  return {MessageType::kExplanation, w.take()};
}

inline ExplanationPayload decode_explanation(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  ExplanationPayload e;
  e.batch_id = r.u64();
  e.predicted_class = r.u32();
  e.probability = r.f64();
  e.frames = r.u16();
  e.patches = r.u16();
  const std::size_t expected = (static_cast<std::size_t>(e.frames) * (e.patches + 1)) * 8 + 8;
  if (r.remaining() != expected) {
    std::ostringstream os;
    os << "explanation carries " << r.remaining() << " map bytes, expected " << expected;
    throw ProtocolError(ErrorCode::kBadLength, os.str());
  }
  e.temporal.resize(e.frames);
  for (auto& v : e.temporal) v = r.f64();
  e.spatial.resize(static_cast<std::size_t>(e.frames) * e.patches);
  for (auto& v : e.spatial) v = r.f64();
  e.server_process_us = r.u64();
  return e;
}

inline Message encode_error(const ErrorPayload& e) {
  Writer w;
  w.u16(static_cast<std::uint16_t>(e.code));
  w.u64(e.batch_id);
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(e.message.data()), e.message.size()));
  return {MessageType::kError, w.take()};
}

inline ErrorPayload decode_error(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  ErrorPayload e;
  e.code = static_cast<ErrorCode>(r.u16());
  e.batch_id = r.u64();
  auto msg = r.bytes(r.remaining());
  e.message.assign(msg.begin(), msg.end());
  return e;
}

inline Message shutdown_message() { return {MessageType::kShutdown, {}}; }

}  // namespace staa::wire
