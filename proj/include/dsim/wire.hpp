#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dsim/error.hpp"
#include "dsim/event.hpp"
#include "dsim/sync.hpp"
#include "dsim/time.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Wire format. Every message is one frame:
//
//   magic "DSIM" (4) | version 0x01 (1) | msg_type (1) |
//   context_id (8, big-endian) | payload_len (4, big-endian) | payload
//
// Payloads are canonical JSON (sorted keys, compact) so identical messages
// are identical bytes. Non-context traffic (registry, etc.) uses context 0.
// ---------------------------------------------------------------------------

enum class MsgType : std::uint8_t {
  kEvent = 0x01,
  kLvtRequest = 0x02,
  kLvtResponse = 0x03,
  kJobPlace = 0x04,
  kPerfPublish = 0x05,
  kRegister = 0x06,
  kHeartbeat = 0x07,
  kResult = 0x08,
  kContextCreate = 0x09,
  kContextDestroy = 0x0A,
  kNack = 0x0B,
};

struct Frame {
  MsgType msg_type = MsgType::kEvent;
  ContextId context_id = 0;
  std::string payload;
};

inline constexpr char kFrameMagic[4] = {'D', 'S', 'I', 'M'};
inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kFrameHeaderLen = 4 + 1 + 1 + 8 + 4;
inline constexpr std::size_t kMaxPayload = 16u << 20;

inline bool valid_msg_type(std::uint8_t t) { return t >= 0x01 && t <= 0x0B; }

inline std::string encode_frame(const Frame& f) {
  if (f.payload.size() > kMaxPayload) throw ProtocolError("payload too large");
  std::string out;
  out.reserve(kFrameHeaderLen + f.payload.size());
  out.append(kFrameMagic, 4);
  out.push_back(static_cast<char>(kFrameVersion));
  out.push_back(static_cast<char>(f.msg_type));
  for (int shift = 56; shift >= 0; shift -= 8) {
    out.push_back(static_cast<char>((f.context_id >> shift) & 0xFF));
  }
  auto len = static_cast<std::uint32_t>(f.payload.size());
  for (int shift = 24; shift >= 0; shift -= 8) {
    out.push_back(static_cast<char>((len >> shift) & 0xFF));
  }
  out.append(f.payload);
  return out;
}

/// Incremental decoder for a byte stream: feed whatever arrived, pull zero
/// or more complete frames out. Any framing violation poisons the stream
/// (the connection must be dropped, per the transport contract).
class FrameParser {
 public:
  void feed(const char* data, std::size_t len) { buf_.append(data, len); }

  std::optional<Frame> next() {
    if (buf_.size() < kFrameHeaderLen) return std::nullopt;
    if (buf_.compare(0, 4, kFrameMagic, 4) != 0) {
      throw ProtocolError("bad frame magic");
    }
    auto version = static_cast<std::uint8_t>(buf_[4]);
    if (version != kFrameVersion) {
      throw ProtocolError("unsupported frame version " +
                          std::to_string(version));
    }
    auto type = static_cast<std::uint8_t>(buf_[5]);
    if (!valid_msg_type(type)) {
      throw ProtocolError("unknown msg_type " + std::to_string(type));
    }
    std::uint64_t ctx = 0;
    for (int i = 0; i < 8; ++i) {
      ctx = (ctx << 8) | static_cast<std::uint8_t>(buf_[6 + i]);
    }
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) {
      len = (len << 8) | static_cast<std::uint8_t>(buf_[14 + i]);
    }
    if (len > kMaxPayload) throw ProtocolError("frame payload oversize");
    if (buf_.size() < kFrameHeaderLen + len) return std::nullopt;
    Frame f;
    f.msg_type = static_cast<MsgType>(type);
    f.context_id = ctx;
    f.payload = buf_.substr(kFrameHeaderLen, len);
    buf_.erase(0, kFrameHeaderLen + len);
    return f;
  }

  std::size_t buffered() const { return buf_.size(); }

 private:
  std::string buf_;
};

/// One-shot decode for tests and single-message paths; requires exactly one
/// whole frame.
inline Frame decode_frame(const std::string& bytes) {
  FrameParser p;
  p.feed(bytes.data(), bytes.size());
  auto f = p.next();
  if (!f) throw ProtocolError("short frame");
  if (p.buffered() != 0) throw ProtocolError("trailing bytes after frame");
  return *f;
}

// ---------------------------------------------------------------------------
// Payload codecs.
// ---------------------------------------------------------------------------

inline nlohmann::json event_to_json(const SimEvent& ev) {
  return nlohmann::json{
      {"dst", ev.dst_lp},          {"kind", to_string(ev.kind)},
      {"payload", ev.payload},     {"seq", ev.key.seq},
      {"src", ev.key.src},         {"src_lp", ev.src_lp},
      {"ts", ev.key.ts.ticks()},
  };
}

inline SimEvent event_from_json(const nlohmann::json& j, ContextId ctx) {
  SimEvent ev;
  ev.context_id = ctx;
  ev.key.ts = VirtualTime(j.at("ts").get<std::int64_t>());
  ev.key.src = j.at("src").get<LpId>();
  ev.key.seq = j.at("seq").get<std::uint64_t>();
  ev.src_lp = j.at("src_lp").get<LpId>();
  ev.dst_lp = j.at("dst").get<LpId>();
  auto kind = event_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw ProtocolError("unknown event kind in payload");
  ev.kind = *kind;
  ev.payload = j.at("payload").get<std::string>();
  return ev;
}

/// Sync traffic carries the sending agent and a per-(sender, context)
/// wire sequence number for FIFO gap detection.
inline Frame sync_to_frame(const SyncMessage& m, std::uint64_t wire_seq) {
  Frame f;
  f.context_id = m.context_id;
  nlohmann::json j;
  j["sender"] = m.sender;
  j["wire_seq"] = wire_seq;
  switch (m.kind) {
    case SyncMsgKind::kEvent:
      f.msg_type = MsgType::kEvent;
      j["event"] = event_to_json(m.event);
      break;
    case SyncMsgKind::kLvtRequest:
      f.msg_type = MsgType::kLvtRequest;
      j["clock"] = m.requester_clock.ticks();
      j["guarantee"] = m.requester_guarantee.ticks();
      j["threshold"] = m.threshold.ticks();
      break;
    case SyncMsgKind::kLvtResponse:
      f.msg_type = MsgType::kLvtResponse;
      j["guarantee"] = m.guarantee.ticks();
      break;
  }
  f.payload = j.dump();
  return f;
}

struct DecodedSync {
  SyncMessage msg;
  std::uint64_t wire_seq = 0;
};

inline DecodedSync sync_from_frame(const Frame& f) {
  nlohmann::json j = nlohmann::json::parse(f.payload);
  DecodedSync d;
  d.msg.context_id = f.context_id;
  d.msg.sender = j.at("sender").get<AgentId>();
  d.wire_seq = j.at("wire_seq").get<std::uint64_t>();
  switch (f.msg_type) {
    case MsgType::kEvent:
      d.msg.kind = SyncMsgKind::kEvent;
      d.msg.event = event_from_json(j.at("event"), f.context_id);
      break;
    case MsgType::kLvtRequest:
      d.msg.kind = SyncMsgKind::kLvtRequest;
      d.msg.requester_clock =
          VirtualTime(j.at("clock").get<std::int64_t>());
      d.msg.requester_guarantee =
          VirtualTime(j.at("guarantee").get<std::int64_t>());
      d.msg.threshold = VirtualTime(j.at("threshold").get<std::int64_t>());
      break;
    case MsgType::kLvtResponse:
      d.msg.kind = SyncMsgKind::kLvtResponse;
      d.msg.guarantee = VirtualTime(j.at("guarantee").get<std::int64_t>());
      break;
    default:
      throw ProtocolError("frame type is not a sync message");
  }
  return d;
}

}  // namespace dsim
