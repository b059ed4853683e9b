#include <gtest/gtest.h>

#include <cstdint>
#include <string>
#include <vector>

#include "dsim/wire.hpp"

namespace dsim {
namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) {
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

TEST(FrameEncodeTest, PinnedEventFrameBytes) {
  Frame f;
  f.msg_type = MsgType::kEvent;
  f.context_id = 1;
  f.payload = "{}";
  const std::vector<std::uint8_t> expected = {
      0x44, 0x53, 0x49, 0x4D,                          // "DSIM"
      0x01,                                            // version
      0x01,                                            // EVENT
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01,  // context 1
      0x00, 0x00, 0x00, 0x02,                          // payload length
      0x7B, 0x7D,                                      // "{}"
  };
  EXPECT_EQ(bytes_of(encode_frame(f)), expected);
}

TEST(FrameEncodeTest, RoundTripsAllTypesAndWideContexts) {
  for (std::uint8_t t = 0x01; t <= 0x0B; ++t) {
    Frame f;
    f.msg_type = static_cast<MsgType>(t);
    f.context_id = 0x0123456789ABCDEFull;
    f.payload = std::string("payload-") + std::to_string(t);
    Frame back = decode_frame(encode_frame(f));
    EXPECT_EQ(back.msg_type, f.msg_type);
    EXPECT_EQ(back.context_id, f.context_id);
    EXPECT_EQ(back.payload, f.payload);
  }
}

TEST(FrameEncodeTest, EmptyPayloadAndContextZero) {
  Frame f;
  f.msg_type = MsgType::kHeartbeat;
  f.context_id = 0;
  std::string wire = encode_frame(f);
  EXPECT_EQ(wire.size(), kFrameHeaderLen);
  Frame back = decode_frame(wire);
  EXPECT_EQ(back.msg_type, MsgType::kHeartbeat);
  EXPECT_EQ(back.context_id, 0u);
  EXPECT_TRUE(back.payload.empty());
}

TEST(FrameParseTest, RejectsBadMagic) {
  std::string wire = encode_frame(Frame{MsgType::kEvent, 1, "{}"});
  wire[0] = 'X';  // "XSIM"
  FrameParser p;
  p.feed(wire.data(), wire.size());
  EXPECT_THROW(p.next(), ProtocolError);
}

TEST(FrameParseTest, RejectsBadVersionAndType) {
  {
    std::string wire = encode_frame(Frame{MsgType::kEvent, 1, "{}"});
    wire[4] = 0x02;
    FrameParser p;
    p.feed(wire.data(), wire.size());
    EXPECT_THROW(p.next(), ProtocolError);
  }
  for (std::uint8_t bad : {std::uint8_t{0x00}, std::uint8_t{0x0C}}) {
    std::string wire = encode_frame(Frame{MsgType::kEvent, 1, "{}"});
    wire[5] = static_cast<char>(bad);
    FrameParser p;
    p.feed(wire.data(), wire.size());
    EXPECT_THROW(p.next(), ProtocolError);
  }
}

TEST(FrameParseTest, RejectsOversizePayloadLength) {
  // Header that announces (16 MiB + 1) bytes of payload.
  std::string wire = encode_frame(Frame{MsgType::kEvent, 1, ""});
  std::uint32_t len = (16u << 20) + 1;
  wire[14] = static_cast<char>((len >> 24) & 0xFF);
  wire[15] = static_cast<char>((len >> 16) & 0xFF);
  wire[16] = static_cast<char>((len >> 8) & 0xFF);
  wire[17] = static_cast<char>(len & 0xFF);
  FrameParser p;
  p.feed(wire.data(), wire.size());
  EXPECT_THROW(p.next(), ProtocolError);
}

TEST(FrameParseTest, IncrementalFeedYieldsFramesInOrder) {
  std::string a = encode_frame(Frame{MsgType::kEvent, 7, "first"});
  std::string b = encode_frame(Frame{MsgType::kLvtRequest, 7, "second"});
  std::string stream = a + b;

  FrameParser p;
  std::vector<Frame> got;
  for (char c : stream) {
    p.feed(&c, 1);
    while (auto f = p.next()) got.push_back(*f);
  }
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].msg_type, MsgType::kEvent);
  EXPECT_EQ(got[0].payload, "first");
  EXPECT_EQ(got[1].msg_type, MsgType::kLvtRequest);
  EXPECT_EQ(got[1].payload, "second");
  EXPECT_EQ(p.buffered(), 0u);
}

TEST(FrameParseTest, PartialFrameIsNotAFrame) {
  std::string wire = encode_frame(Frame{MsgType::kResult, 3, "abcdef"});
  FrameParser p;
  p.feed(wire.data(), wire.size() - 1);
  EXPECT_EQ(p.next(), std::nullopt);
  p.feed(wire.data() + wire.size() - 1, 1);
  auto f = p.next();
  ASSERT_TRUE(f.has_value());
  EXPECT_EQ(f->payload, "abcdef");
}

TEST(FrameParseTest, OneShotDecodeRejectsShortAndTrailing) {
  std::string wire = encode_frame(Frame{MsgType::kEvent, 1, "{}"});
  EXPECT_THROW(decode_frame(wire.substr(0, wire.size() - 1)), ProtocolError);
  EXPECT_THROW(decode_frame(wire + "x"), ProtocolError);
}

// ---------------------------------------------------------------------------
// Payload codecs.
// ---------------------------------------------------------------------------

SimEvent sample_event() {
  SimEvent ev;
  ev.key = EventKey{VirtualTime(123456), 42, 7};
  ev.context_id = 99;
  ev.src_lp = 42;
  ev.dst_lp = 13;
  ev.kind = EventKind::kStateUpdate;
  ev.payload = R"({"component":"cpu-3","version":5})";
  return ev;
}

TEST(EventCodecTest, JsonRoundTripPreservesEverything) {
  SimEvent ev = sample_event();
  SimEvent back = event_from_json(event_to_json(ev), ev.context_id);
  EXPECT_EQ(back.key, ev.key);
  EXPECT_EQ(back.context_id, ev.context_id);
  EXPECT_EQ(back.src_lp, ev.src_lp);
  EXPECT_EQ(back.dst_lp, ev.dst_lp);
  EXPECT_EQ(back.kind, ev.kind);
  EXPECT_EQ(back.payload, ev.payload);
}

TEST(EventCodecTest, CanonicalJsonIsByteStable) {
  SimEvent ev = sample_event();
  EXPECT_EQ(event_to_json(ev).dump(), event_to_json(ev).dump());
  // Keys come out sorted, so semantically equal messages encode equal.
  auto j = event_to_json(ev);
  std::string dumped = j.dump();
  EXPECT_LT(dumped.find("\"dst\""), dumped.find("\"kind\""));
  EXPECT_LT(dumped.find("\"kind\""), dumped.find("\"payload\""));
  EXPECT_LT(dumped.find("\"src\""), dumped.find("\"ts\""));
}

TEST(EventCodecTest, UnknownKindRejected) {
  auto j = event_to_json(sample_event());
  j["kind"] = "NOT_A_KIND";
  EXPECT_THROW(event_from_json(j, 99), ProtocolError);
}

TEST(SyncCodecTest, EventMessageRoundTrip) {
  SyncMessage m;
  m.kind = SyncMsgKind::kEvent;
  m.context_id = 99;
  m.sender = 4;
  m.event = sample_event();
  Frame f = sync_to_frame(m, 17);
  EXPECT_EQ(f.msg_type, MsgType::kEvent);
  EXPECT_EQ(f.context_id, 99u);

  DecodedSync d = sync_from_frame(decode_frame(encode_frame(f)));
  EXPECT_EQ(d.wire_seq, 17u);
  EXPECT_EQ(d.msg.kind, SyncMsgKind::kEvent);
  EXPECT_EQ(d.msg.sender, 4u);
  EXPECT_EQ(d.msg.event.key, m.event.key);
  EXPECT_EQ(d.msg.event.context_id, 99u);
  EXPECT_EQ(d.msg.event.payload, m.event.payload);
}

TEST(SyncCodecTest, LvtRequestRoundTrip) {
  SyncMessage m;
  m.kind = SyncMsgKind::kLvtRequest;
  m.context_id = 5;
  m.sender = 2;
  m.requester_clock = VirtualTime(10);
  m.requester_guarantee = VirtualTime(12);
  m.threshold = VirtualTime(30);
  DecodedSync d = sync_from_frame(sync_to_frame(m, 3));
  EXPECT_EQ(d.msg.kind, SyncMsgKind::kLvtRequest);
  EXPECT_EQ(d.msg.requester_clock, VirtualTime(10));
  EXPECT_EQ(d.msg.requester_guarantee, VirtualTime(12));
  EXPECT_EQ(d.msg.threshold, VirtualTime(30));
  EXPECT_EQ(d.wire_seq, 3u);
}

TEST(SyncCodecTest, LvtResponseRoundTrip) {
  SyncMessage m;
  m.kind = SyncMsgKind::kLvtResponse;
  m.context_id = 5;
  m.sender = 9;
  m.guarantee = VirtualTime(1'000'001);
  DecodedSync d = sync_from_frame(sync_to_frame(m, 0));
  EXPECT_EQ(d.msg.kind, SyncMsgKind::kLvtResponse);
  EXPECT_EQ(d.msg.guarantee, VirtualTime(1'000'001));
  EXPECT_EQ(d.msg.sender, 9u);
}

TEST(SyncCodecTest, NonSyncFrameRejected) {
  Frame f;
  f.msg_type = MsgType::kHeartbeat;
  f.context_id = 0;
  f.payload = R"({"sender":1,"wire_seq":0})";
  EXPECT_THROW(sync_from_frame(f), ProtocolError);
}

}  // namespace
}  // namespace dsim
