#include "kst/mailbox.hpp"
#include "kst/metrics.hpp"
#include "kst/protocol.hpp"
#include "kst/recording.hpp"
#include "kst/session_config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

using namespace kst;
using nlohmann::json;

namespace {

std::string code_of(const std::string& text) {
  try {
    parse_envelope(text);
  } catch (const ProtocolError& e) {
    return e.code();
  }
  return "";
}

}  // namespace

// ---------------------------------------------------------------------------
// Envelope and payload codecs

TEST(Protocol, MotionInputRoundTrip) {
  MotionInput m;
  m.timestamp = 1.25;
  m.targets["hand_left"] = {Pose(Vec3(0.1, 0.2, 0.3), Quat(Eigen::AngleAxisd(0.4, Vec3::UnitY())))};
  m.targets["chest"] = {Pose(Vec3::Zero(), Quat(Eigen::AngleAxisd(0.2, Vec3::UnitZ()))), false, true};
  m.com_ground = Vec3(0.01, -0.02, 0.0);
  m.chest_orientation = Quat(Eigen::AngleAxisd(-0.1, Vec3::UnitX()));

  const std::string text = encode({msg::motion_input, 42, 3.5, to_json(m)});
  const Envelope e = parse_envelope(text);
  EXPECT_EQ(e.type, "motion_input");
  EXPECT_EQ(e.seq, 42u);
  EXPECT_DOUBLE_EQ(e.t_send_s, 3.5);
  const MotionInput r = motion_input_from_json(e.payload);
  EXPECT_DOUBLE_EQ(r.timestamp, 1.25);
  ASSERT_EQ(r.targets.size(), 2u);
  EXPECT_TRUE(r.targets.at("hand_left").pose.position.isApprox(Vec3(0.1, 0.2, 0.3)));
  EXPECT_LT(angle_between(r.targets.at("hand_left").pose.orientation, m.targets["hand_left"].pose.orientation), 1e-12);
  EXPECT_FALSE(r.targets.at("chest").track_linear);
  EXPECT_TRUE(r.targets.at("chest").track_angular);
  EXPECT_TRUE(r.com_ground->isApprox(*m.com_ground));
  EXPECT_LT(angle_between(*r.chest_orientation, *m.chest_orientation), 1e-12);
}

TEST(Protocol, QuaternionsAreWxyzOnTheWire) {
  const Quat q(0.5, 0.5, 0.5, 0.5);
  EXPECT_EQ(wire::quat(q), json::array({0.5, 0.5, 0.5, 0.5}));
  const Quat z(Eigen::AngleAxisd(kPi / 2, Vec3::UnitZ()));
  const json j = wire::quat(z);
  EXPECT_NEAR(j[0].get<double>(), std::cos(kPi / 4), 1e-15);
  EXPECT_NEAR(j[3].get<double>(), std::sin(kPi / 4), 1e-15);
}

TEST(Protocol, TrackerBundleRoundTrip) {
  TrackerBundle b;
  b.timestamp = 0.5;
  b.headset = Pose(Vec3(0, 0, 1.7), Quat::Identity());
  b.ankle_right = Pose(Vec3(0.1, -0.1, 0.08), Quat(Eigen::AngleAxisd(0.3, Vec3::UnitZ())));
  const TrackerBundle r = tracker_bundle_from_json(parse_envelope(encode({msg::tracker_frame, 1, 0.0, to_json(b)})).payload);
  EXPECT_DOUBLE_EQ(r.timestamp, 0.5);
  EXPECT_TRUE(r.headset.position.isApprox(b.headset.position));
  EXPECT_LT(angle_between(r.ankle_right.orientation, b.ankle_right.orientation), 1e-12);
}

TEST(Protocol, FootstepCommandRoundTrip) {
  FootstepCommand c;
  c.side = Side::right;
  c.pose = Pose(Vec3(0.3, -0.1, 0.0), yaw_rotation(0.2));
  const FootstepCommand r = footstep_command_from_json(to_json(c));
  EXPECT_EQ(r.side, Side::right);
  EXPECT_TRUE(r.pose.position.isApprox(c.pose.position));
  EXPECT_NEAR(yaw_of(r.pose.orientation), 0.2, 1e-12);
}

TEST(Protocol, UnknownFieldsAreIgnored) {
  json j = json::parse(encode({msg::motion_input, 3, 0.0, {{"timestamp", 0.1}, {"targets", json::object()}}}));
  j["future_field"] = {1, 2, 3};
  j["payload"]["extra"] = "x";
  const Envelope e = parse_envelope(j.dump());
  EXPECT_EQ(e.seq, 3u);
  EXPECT_NO_THROW(motion_input_from_json(e.payload));
}

TEST(Protocol, ErrorsCarryCodes) {
  EXPECT_EQ(code_of("{\"v\":1,\"type\":\"motion_input\",\"seq\":1,"), "malformed");
  EXPECT_EQ(code_of("[1,2]"), "malformed");
  EXPECT_EQ(code_of(R"({"v":1,"seq":1,"t_send_s":0,"payload":{}})"), "missing_field");
  EXPECT_EQ(code_of(R"({"v":2,"type":"motion_input","seq":1,"t_send_s":0,"payload":{}})"), "version");
  EXPECT_EQ(code_of(R"({"v":1,"type":"teleport","seq":1,"t_send_s":0,"payload":{}})"), "unknown_type");
  EXPECT_EQ(code_of(R"({"v":1,"type":"hello","seq":1,"t_send_s":0,"payload":{}})"), "");

  EXPECT_THROW(footstep_command_from_json({{"side", "middle"}, {"p", {0, 0, 0}}}), ProtocolError);
  EXPECT_THROW(motion_input_from_json({{"timestamp", 0.0}, {"targets", {{"hand_left", {{"p", {0, 0}}, {"q", {1, 0, 0, 0}}}}}}}),
               ProtocolError);
  EXPECT_THROW(motion_input_from_json({{"timestamp", 0.0},
                                       {"targets", {{"hand_left", {{"p", {0, 0, 0}}, {"q", {1, 0, 0, 0}}, {"linear", 1}}}}}}),
               ProtocolError);
  EXPECT_THROW(motion_input_from_json({{"targets", json::object()}}), ProtocolError);
}

TEST(Protocol, ErrorMessageEchoesSequence) {
  const Envelope e = error_message("malformed", "bad", 17);
  EXPECT_EQ(e.type, "error");
  EXPECT_EQ(e.payload["ref_seq"], 17);
  EXPECT_EQ(e.payload["code"], "malformed");
}

// ---------------------------------------------------------------------------
// Raw framing

TEST(LengthPrefix, ByteAtATime) {
  const std::string stream = frame_length_prefixed("hello") + frame_length_prefixed("") + frame_length_prefixed("{\"a\":1}");
  EXPECT_EQ(static_cast<unsigned char>(stream[3]), 5);
  LengthPrefixDecoder d;
  std::vector<std::string> got;
  for (char c : stream) {
    d.feed(std::string_view(&c, 1));
    while (auto m = d.next()) got.push_back(*m);
  }
  EXPECT_EQ(got, (std::vector<std::string>{"hello", "", "{\"a\":1}"}));
  EXPECT_EQ(d.buffered(), 0u);
}

TEST(LengthPrefix, BigEndianLengthAndOversize) {
  const std::string big(300, 'x');
  const std::string f = frame_length_prefixed(big);
  EXPECT_EQ(static_cast<unsigned char>(f[2]), 1);
  EXPECT_EQ(static_cast<unsigned char>(f[3]), 44);
  LengthPrefixDecoder d;
  d.feed(std::string("\x7f\x00\x00\x00", 4));
  EXPECT_THROW(d.next(), ProtocolError);
}

// ---------------------------------------------------------------------------
// WebSocket

TEST(WebSocket, AcceptKeyMatchesRfcExample) {
  EXPECT_EQ(ws::accept_key("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

TEST(WebSocket, Handshake) {
  const std::string req =
      "GET /kst HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
      "sec-websocket-key:   dGhlIHNhbXBsZSBub25jZQ==  \r\nSec-WebSocket-Version: 13\r\n\r\n";
  EXPECT_FALSE(ws::parse_handshake(req.substr(0, req.size() - 2)));
  const auto h = ws::parse_handshake(req + "\x81");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->consumed, req.size());
  EXPECT_NE(h->response.find("101 Switching Protocols"), std::string::npos);
  EXPECT_NE(h->response.find("Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo=\r\n"), std::string::npos);
  EXPECT_THROW(ws::parse_handshake("GET / HTTP/1.1\r\nHost: x\r\n\r\n"), ProtocolError);
}

TEST(WebSocket, RfcMaskedHelloFrame) {
  // RFC 6455 section 5.7: a masked single-frame "Hello"
  const std::string wire("\x81\x85\x37\xfa\x21\x3d\x7f\x9f\x4d\x51\x58", 11);
  EXPECT_EQ(ws::encode_frame("Hello", ws::text, std::array<std::uint8_t, 4>{0x37, 0xfa, 0x21, 0x3d}), wire);
  ws::Decoder d;
  d.feed(wire);
  const auto m = d.next();
  ASSERT_TRUE(m);
  EXPECT_EQ(m->opcode, ws::text);
  EXPECT_EQ(m->payload, "Hello");
  EXPECT_FALSE(d.next());
  EXPECT_EQ(ws::encode_frame("Hello"), std::string("\x81\x05Hello", 7));
}

TEST(WebSocket, FragmentsWithInterleavedPing) {
  // RFC 6455 section 5.7 fragments, with a ping between them
  ws::Decoder d;
  d.feed(std::string("\x01\x03Hel", 5));
  d.feed(std::string("\x89\x02hi", 4));
  d.feed(std::string("\x80\x02lo", 4));
  auto a = d.next();
  ASSERT_TRUE(a);
  EXPECT_EQ(a->opcode, ws::ping);
  EXPECT_EQ(a->payload, "hi");
  auto b = d.next();
  ASSERT_TRUE(b);
  EXPECT_EQ(b->opcode, ws::text);
  EXPECT_EQ(b->payload, "Hello");

  ws::Decoder bad;
  bad.feed(std::string("\x80\x02lo", 4));
  EXPECT_THROW(bad.next(), ProtocolError);
}

TEST(WebSocket, ExtendedLengths) {
  for (std::size_t n : {125u, 126u, 65535u, 65536u, 200000u}) {
    std::string payload(n, 'a');
    for (std::size_t i = 0; i < n; ++i) payload[i] = static_cast<char>('a' + i % 26);
    const std::string f = ws::encode_frame(payload, ws::text, std::array<std::uint8_t, 4>{1, 2, 3, 4});
    const std::size_t header = n < 126 ? 2 : n <= 65535 ? 4 : 10;
    EXPECT_EQ(f.size(), header + 4 + n);
    ws::Decoder d;
    // split mid-header to exercise partial reads
    d.feed(f.substr(0, 3));
    EXPECT_FALSE(d.next());
    d.feed(f.substr(3));
    const auto m = d.next();
    ASSERT_TRUE(m);
    EXPECT_EQ(m->payload, payload);
  }
}

// ---------------------------------------------------------------------------
// Mailbox and queue

TEST(Mailbox, LatestValueWins) {
  LatestValueMailbox<int> mb;
  EXPECT_FALSE(mb.read());
  mb.write(1);
  EXPECT_TRUE(mb.has_unread());
  EXPECT_EQ(*mb.read(), 1);
  EXPECT_FALSE(mb.read());
  EXPECT_EQ(mb.overwrites(), 0u);
  mb.write(2);
  mb.write(3);
  EXPECT_EQ(mb.overwrites(), 1u);
  EXPECT_EQ(*mb.read(), 3);
  EXPECT_FALSE(mb.read());
  EXPECT_EQ(mb.writes(), 3u);
}

TEST(Mailbox, ConcurrentReadsAreCoherentAndMonotone) {
  struct Item {
    std::uint64_t a = 0;
    std::array<double, 64> payload{};
    std::uint64_t b = 0;
  };
  LatestValueMailbox<Item> mb;
  constexpr std::uint64_t kN = 200000;
  std::thread writer([&] {
    for (std::uint64_t i = 1; i <= kN; ++i) {
      Item it;
      it.a = it.b = i;
      it.payload.fill(static_cast<double>(i));
      mb.write(it);
    }
  });
  std::uint64_t last = 0, reads = 0, torn = 0, backwards = 0;
  while (last < kN) {
    if (auto it = mb.read()) {
      ++reads;
      if (it->a != it->b || it->payload[0] != it->payload[63] || it->payload[31] != static_cast<double>(it->a)) ++torn;
      if (it->a <= last) ++backwards;
      last = it->a;
    }
  }
  writer.join();
  EXPECT_EQ(torn, 0u);
  EXPECT_EQ(backwards, 0u);
  EXPECT_EQ(reads + mb.overwrites(), kN);
}

TEST(DropOldestQueue, DropsOldestAndCounts) {
  DropOldestQueue<int> q(3);
  for (int i = 0; i < 5; ++i) q.push(i);
  EXPECT_EQ(q.size(), 3u);
  EXPECT_EQ(q.dropped(), 2u);
  EXPECT_EQ(q.drain(), (std::vector<int>{2, 3, 4}));
  EXPECT_FALSE(q.pop());
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Histogram, Percentiles) {
  Histogram h(1.0, 1000);
  for (int i = 0; i < 100; ++i) h.add(i + 0.5);
  EXPECT_EQ(h.count(), 100u);
  EXPECT_DOUBLE_EQ(h.mean(), 50.0);
  EXPECT_DOUBLE_EQ(h.percentile(0.5), 50.0);
  EXPECT_DOUBLE_EQ(h.percentile(0.99), 99.0);
  EXPECT_DOUBLE_EQ(h.percentile(1.0), 100.0);
  EXPECT_DOUBLE_EQ(h.max(), 99.5);
  h.add(1e9);  // overflow bucket reports the max
  EXPECT_DOUBLE_EQ(h.percentile(1.0), 1e9);
}

TEST(Metrics, CsvExport) {
  Metrics m;
  m.keep_traces = true;
  m.record_tracking(0, "hand_left", Pose(Vec3(0, 0, 0), Quat::Identity()), Pose(Vec3(0.03, 0.04, 0), Quat::Identity()));
  m.record_tracking(1, "hand_left", Pose(Vec3(0, 0, 0), Quat::Identity()), Pose(Vec3(0, 0, 0), Quat::Identity()));
  EXPECT_NEAR(m.tracking["hand_left"].rms_position(), std::sqrt(0.05 * 0.05 / 2), 1e-15);
  const auto dir = std::filesystem::temp_directory_path() / "kst_metrics_test";
  std::filesystem::remove_all(dir);
  m.write_csv(dir);
  std::ifstream f(dir / "hand_left.csv");
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  EXPECT_EQ(header, Metrics::kTraceHeader);
  EXPECT_EQ(row.substr(0, 12), "0,hand_left,");
  EXPECT_NE(row.find(",0.05"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "summary.csv"));
  const json s = json::parse(std::ifstream(dir / "summary.json"));
  EXPECT_EQ(s["faults"], 0);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Recording

TEST(Recording, WriteParseRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "kst_rec_test.rec";
  {
    RecordingWriter w(path.string());
    w.append(0.016666666, R"({"v":1})");
    w.append(0.5, "text with spaces");
  }
  const auto msgs = read_recording(path.string());
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_NEAR(msgs[0].arrival, 0.016666666, 1e-12);
  EXPECT_EQ(msgs[0].text, R"({"v":1})");
  EXPECT_EQ(msgs[1].text, "text with spaces");
  std::filesystem::remove(path);
}

TEST(Recording, EmptyAndMalformed) {
  std::istringstream empty("");
  EXPECT_TRUE(parse_recording(empty).empty());
  std::istringstream header_only("# kst-recording v1\n");
  EXPECT_TRUE(parse_recording(header_only).empty());
  std::istringstream no_header("0.1 {}\n");
  EXPECT_THROW(parse_recording(no_header), RecordingError);
  std::istringstream version("# kst-recording v2\n");
  EXPECT_THROW(parse_recording(version), RecordingError);
  std::istringstream bad_time("# kst-recording v1\nabc {}\n");
  EXPECT_THROW(parse_recording(bad_time), RecordingError);
  std::istringstream backwards("# kst-recording v1\n0.2 {}\n0.1 {}\n");
  EXPECT_THROW(parse_recording(backwards), RecordingError);
  EXPECT_THROW(read_recording("/nonexistent/kst.rec"), RecordingError);
}

// ---------------------------------------------------------------------------
// Session config

TEST(SessionConfig, DefaultsFromEmptyObject) {
  const SessionConfig c = session_config_from_json(json::object());
  EXPECT_EQ(c.tick_rate, 1000.0);
  EXPECT_EQ(c.input_rate, 60.0);
  EXPECT_DOUBLE_EQ(c.ik.dt, 1e-3);
  EXPECT_EQ(c.input_mode, InputMode::motion_input);
}

TEST(SessionConfig, ParsesNestedSectionsAndDegrees) {
  const json j = json::parse(R"({
    "tick_rate": 500, "input_mode": "tracker", "model": "../models/x.model",
    "retargeting": {"max_step_yaw_deg": 45},
    "estimator": {"mode": "first_order", "t_corr": 0.1},
    "ik": {"com_mode": "track_user", "weights": {"hand": 3}, "qp": {"max_iterations": 50}},
    "postprocess": {"kp": 400, "kd": 40},
    "footsteps": {"swing_duration": 0.8}
  })");
  const SessionConfig c = session_config_from_json(j, "/data/configs");
  EXPECT_DOUBLE_EQ(c.ik.dt, 2e-3);
  EXPECT_EQ(c.input_mode, InputMode::tracker);
  EXPECT_EQ(c.model_path, "/data/models/x.model");
  EXPECT_NEAR(c.retargeting.max_step_yaw, kPi / 4, 1e-15);
  EXPECT_EQ(c.estimator.mode, EstimatorMode::first_order);
  EXPECT_EQ(c.estimator.t_corr, 0.1);
  EXPECT_EQ(c.ik.com_mode, ComMode::track_user);
  EXPECT_EQ(c.ik.weights.hand, 3.0);
  EXPECT_EQ(c.ik.qp.max_iterations, 50);
  EXPECT_EQ(c.postprocess.kp, 400.0);
  EXPECT_EQ(c.footsteps.swing_duration, 0.8);
}

TEST(SessionConfig, RejectsBadInput) {
  auto err = [](const char* text) -> std::string {
    try {
      session_config_from_json(json::parse(text));
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(err(R"({"tick_rat": 1000})").find("config.tick_rat"), std::string::npos);
  EXPECT_NE(err(R"({"ik": {"weights": {"hands": 1}}})").find("config.ik.weights.hands"), std::string::npos);
  EXPECT_NE(err(R"({"tick_rate": 30})").find("tick_rate"), std::string::npos);
  EXPECT_NE(err(R"({"tick_rate": "fast"})").find("wrong type"), std::string::npos);
  EXPECT_NE(err(R"({"input_mode": "vr"})").find("input_mode"), std::string::npos);
  EXPECT_NE(err(R"({"safety": {"box_min": [0, 0]}})").find("3 entries"), std::string::npos);
  EXPECT_NE(err(R"({"postprocess": {"kp": -1}})").find("postprocess"), std::string::npos);
  EXPECT_THROW(load_session_config("/nonexistent.json"), ConfigError);
}
