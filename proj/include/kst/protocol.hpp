// protocol.hpp - v1 wire messages, length-prefix framing and WebSocket framing
#pragma once

#include "kst/input_pipeline.hpp"
#include "kst/postprocess.hpp"
#include "kst/retargeting.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <openssl/sha.h>

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kst {

inline constexpr int kProtocolVersion = 1;

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(std::string code, const std::string& what) : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

namespace msg {
inline constexpr const char* tracker_frame = "tracker_frame";
inline constexpr const char* motion_input = "motion_input";
inline constexpr const char* footstep_command = "footstep_command";
inline constexpr const char* footstep_command_ack = "footstep_command_ack";
inline constexpr const char* joint_frame = "joint_frame";
inline constexpr const char* metrics_snapshot = "metrics_snapshot";
inline constexpr const char* error = "error";
inline constexpr const char* hello = "hello";
inline constexpr const char* model_summary_request = "model_summary_request";
inline constexpr const char* model_summary = "model_summary";

inline bool known(std::string_view t) {
  for (const char* k : {tracker_frame, motion_input, footstep_command, footstep_command_ack, joint_frame,
                        metrics_snapshot, error, hello, model_summary_request, model_summary})
    if (t == k) return true;
  return false;
}
}  // namespace msg

struct Envelope {
  std::string type;
  std::uint64_t seq = 0;
  double t_send_s = 0.0;
  nlohmann::json payload = nlohmann::json::object();
};

inline std::string encode(const Envelope& e) {
  nlohmann::json j{{"v", kProtocolVersion}, {"type", e.type}, {"seq", e.seq}, {"t_send_s", e.t_send_s},
                   {"payload", e.payload}};
  return j.dump();
}

/// Parses one message. Unknown fields are ignored; unknown types and other
/// versions are errors.
inline Envelope parse_envelope(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError("malformed", std::string("malformed message: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("malformed", "message is not a JSON object");
  auto field = [&](const char* k) -> const nlohmann::json& {
    if (!j.contains(k)) throw ProtocolError("missing_field", std::string("missing field '") + k + "'");
    return j.at(k);
  };
  const auto& v = field("v");
  if (!v.is_number_integer() || v.get<int>() != kProtocolVersion)
    throw ProtocolError("version", "unsupported protocol version " + v.dump());
  Envelope e;
  if (!field("type").is_string()) throw ProtocolError("malformed", "'type' must be a string");
  e.type = j["type"].get<std::string>();
  if (!msg::known(e.type)) throw ProtocolError("unknown_type", "unknown message type '" + e.type + "'");
  if (j.contains("seq")) {
    if (!j["seq"].is_number_unsigned() && !j["seq"].is_number_integer())
      throw ProtocolError("malformed", "'seq' must be an integer");
    e.seq = j["seq"].get<std::uint64_t>();
  }
  if (j.contains("t_send_s")) {
    if (!j["t_send_s"].is_number()) throw ProtocolError("malformed", "'t_send_s' must be a number");
    e.t_send_s = j["t_send_s"].get<double>();
  }
  if (j.contains("payload")) {
    if (!j["payload"].is_object()) throw ProtocolError("malformed", "'payload' must be an object");
    e.payload = j["payload"];
  }
  return e;
}

// ---------------------------------------------------------------------------
// Payload codecs

namespace wire {

inline nlohmann::json vec(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline nlohmann::json quat(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }
inline nlohmann::json pose(const Pose& p) { return {{"p", vec(p.position)}, {"q", quat(p.orientation)}}; }

inline double number(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number()) throw ProtocolError("bad_payload", where + " must be a number");
  return j.get<double>();
}

inline Vec3 read_vec(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ProtocolError("bad_payload", where + " must be [x, y, z]");
  return {number(j[0], where), number(j[1], where), number(j[2], where)};
}

inline Quat read_quat(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw ProtocolError("bad_payload", where + " must be [w, x, y, z]");
  Quat q(number(j[0], where), number(j[1], where), number(j[2], where), number(j[3], where));
  const double n = q.norm();
  if (!(n > 1e-6)) throw ProtocolError("bad_payload", where + " is not a rotation");
  q.coeffs() /= n;
  return q;
}

inline const nlohmann::json& at(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ProtocolError("bad_payload", where + "." + key + " missing");
  return j.at(key);
}

inline Pose read_pose(const nlohmann::json& j, const std::string& where) {
  return {read_vec(at(j, "p", where), where + ".p"), read_quat(at(j, "q", where), where + ".q")};
}

}  // namespace wire

inline const std::array<std::pair<const char*, Pose TrackerBundle::*>, 7>& tracker_fields() {
  static const std::array<std::pair<const char*, Pose TrackerBundle::*>, 7> f{{
      {"headset", &TrackerBundle::headset},
      {"controller_left", &TrackerBundle::controller_left},
      {"controller_right", &TrackerBundle::controller_right},
      {"chest", &TrackerBundle::chest},
      {"waist", &TrackerBundle::waist},
      {"ankle_left", &TrackerBundle::ankle_left},
      {"ankle_right", &TrackerBundle::ankle_right},
  }};
  return f;
}

inline nlohmann::json to_json(const TrackerBundle& b) {
  nlohmann::json j{{"timestamp", b.timestamp}};
  for (const auto& [name, member] : tracker_fields()) j[name] = wire::pose(b.*member);
  return j;
}

inline TrackerBundle tracker_bundle_from_json(const nlohmann::json& j) {
  TrackerBundle b;
  b.timestamp = wire::number(wire::at(j, "timestamp", "payload"), "payload.timestamp");
  for (const auto& [name, member] : tracker_fields())
    b.*member = wire::read_pose(wire::at(j, name, "payload"), std::string("payload.") + name);
  return b;
}

inline nlohmann::json to_json(const MotionInput& m) {
  nlohmann::json j{{"timestamp", m.timestamp}, {"targets", nlohmann::json::object()}};
  for (const auto& [body, t] : m.targets) {
    nlohmann::json e = wire::pose(t.pose);
    e["linear"] = t.track_linear;
    e["angular"] = t.track_angular;
    j["targets"][body] = e;
  }
  if (m.com_ground) j["com_ground"] = wire::vec(*m.com_ground);
  if (m.chest_orientation) j["chest_orientation"] = wire::quat(*m.chest_orientation);
  return j;
}

inline MotionInput motion_input_from_json(const nlohmann::json& j) {
  MotionInput m;
  m.timestamp = wire::number(wire::at(j, "timestamp", "payload"), "payload.timestamp");
  if (j.contains("targets")) {
    if (!j["targets"].is_object()) throw ProtocolError("bad_payload", "payload.targets must be an object");
    for (const auto& [body, e] : j["targets"].items()) {
      const std::string where = "payload.targets." + body;
      BodyTarget t;
      t.pose = wire::read_pose(e, where);
      auto flag = [&](const char* k, bool& out) {
        if (!e.contains(k)) return;
        if (!e[k].is_boolean()) throw ProtocolError("bad_payload", where + "." + k + " must be a boolean");
        out = e[k].get<bool>();
      };
      flag("linear", t.track_linear);
      flag("angular", t.track_angular);
      m.targets[body] = t;
    }
  }
  if (j.contains("com_ground")) m.com_ground = wire::read_vec(j["com_ground"], "payload.com_ground");
  if (j.contains("chest_orientation"))
    m.chest_orientation = wire::read_quat(j["chest_orientation"], "payload.chest_orientation");
  return m;
}

inline nlohmann::json to_json(const FootstepCommand& c) {
  return {{"side", to_string(c.side)}, {"p", wire::vec(c.pose.position)}, {"yaw", yaw_of(c.pose.orientation)}};
}

inline FootstepCommand footstep_command_from_json(const nlohmann::json& j) {
  FootstepCommand c;
  const auto& side = wire::at(j, "side", "payload");
  if (side == "left") c.side = Side::left;
  else if (side == "right") c.side = Side::right;
  else throw ProtocolError("bad_payload", "payload.side must be \"left\" or \"right\"");
  c.pose.position = wire::read_vec(wire::at(j, "p", "payload"), "payload.p");
  c.pose.orientation = yaw_rotation(j.contains("yaw") ? wire::number(j["yaw"], "payload.yaw") : 0.0);
  return c;
}

inline nlohmann::json joint_frame_payload(const JointSetpointFrame& f, bool with_acceleration = false) {
  auto arr = [](const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j{{"tick", f.tick}, {"t", f.timestamp}, {"q", arr(f.q)}, {"qd", arr(f.qd)},
                   {"base", wire::pose(f.base_pose)}};
  if (with_acceleration) j["qdd"] = arr(f.qdd);
  return j;
}

/// Joint layout for client-side forward kinematics.
inline nlohmann::json model_summary_payload(const RobotModel& m) {
  nlohmann::json joints = nlohmann::json::array();
  for (const Joint& j : m.joints) {
    const char* type = j.type == JointType::revolute ? "revolute" : j.type == JointType::floating ? "floating" : "fixed";
    nlohmann::json e{{"name", j.name},
                     {"type", type},
                     {"parent", j.parent_link < 0 ? nlohmann::json(nullptr) : nlohmann::json(m.links[j.parent_link].name)},
                     {"child", m.links[j.child_link].name},
                     {"origin", wire::pose(j.origin)},
                     {"axis", wire::vec(j.axis)},
                     {"q_index", j.q_index}};
    if (j.type == JointType::revolute) e["limits"] = {j.q_min, j.q_max};
    joints.push_back(e);
  }
  nlohmann::json frames = nlohmann::json::object();
  for (const Frame& f : m.frames) frames[f.name] = {{"link", m.links[f.link].name}, {"origin", wire::pose(f.offset)}};
  nlohmann::json joint_names = nlohmann::json::array();
  for (int i = 0; i < m.num_joints(); ++i) joint_names.push_back(m.revolute(i).name);
  return {{"name", m.name}, {"dof", m.num_joints()}, {"floating_base", m.floating_base()},
          {"joints", joints}, {"frames", frames}, {"joint_order", joint_names}};
}

inline Envelope error_message(const std::string& code, const std::string& what, std::uint64_t ref_seq = 0) {
  return {msg::error, 0, 0.0, {{"code", code}, {"message", what}, {"ref_seq", ref_seq}}};
}

// ---------------------------------------------------------------------------
// Raw framing: 4-byte big-endian length, then the UTF-8 message.

inline constexpr std::size_t kMaxMessageBytes = 1 << 20;

inline std::string frame_length_prefixed(std::string_view text) {
  const auto n = static_cast<std::uint32_t>(text.size());
  std::string out(4, '\0');
  for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((n >> (24 - 8 * i)) & 0xff);
  out.append(text);
  return out;
}

class LengthPrefixDecoder {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }

  /// Next complete message, if any. Throws on an oversize length.
  std::optional<std::string> next() {
    if (buf_.size() < 4) return std::nullopt;
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n = (n << 8) | static_cast<unsigned char>(buf_[i]);
    if (n > kMaxMessageBytes) throw ProtocolError("oversize", "message length " + std::to_string(n) + " too large");
    if (buf_.size() < 4 + n) return std::nullopt;
    std::string out = buf_.substr(4, n);
    buf_.erase(0, 4 + n);
    return out;
  }

  std::size_t buffered() const { return buf_.size(); }

 private:
  std::string buf_;
};

// ---------------------------------------------------------------------------
// WebSocket (server side)

namespace ws {

inline constexpr const char* kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

enum Opcode : std::uint8_t { continuation = 0x0, text = 0x1, binary = 0x2, close = 0x8, ping = 0x9, pong = 0xA };

inline std::string accept_key(const std::string& client_key) {
  const std::string s = client_key + kGuid;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  unsigned char b64[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(b64, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char*>(b64), n);
}

struct Handshake {
  std::string response;
  std::size_t consumed = 0;
};

/// Parses an HTTP upgrade request at the front of `buf`. Returns nullopt while
/// the header is incomplete; throws when it is not a WebSocket upgrade.
inline std::optional<Handshake> parse_handshake(std::string_view buf) {
  const auto end = buf.find("\r\n\r\n");
  if (end == std::string_view::npos) {
    if (buf.size() > 16384) throw ProtocolError("handshake", "HTTP header too large");
    return std::nullopt;
  }
  std::string key;
  std::size_t pos = buf.find("\r\n") + 2;
  while (pos < end) {
    const std::size_t eol = buf.find("\r\n", pos);
    const std::string_view line = buf.substr(pos, eol - pos);
    const auto colon = line.find(':');
    if (colon != std::string_view::npos) {
      std::string name(line.substr(0, colon));
      for (char& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      std::string_view value = line.substr(colon + 1);
      while (!value.empty() && value.front() == ' ') value.remove_prefix(1);
      while (!value.empty() && value.back() == ' ') value.remove_suffix(1);
      if (name == "sec-websocket-key") key = value;
    }
    pos = eol + 2;
  }
  if (key.empty()) throw ProtocolError("handshake", "missing Sec-WebSocket-Key");
  Handshake h;
  h.consumed = end + 4;
  h.response =
      "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Accept: " +
      accept_key(key) + "\r\n\r\n";
  return h;
}

/// One frame; `mask` is only set by clients.
inline std::string encode_frame(std::string_view payload, Opcode op = text,
                                std::optional<std::array<std::uint8_t, 4>> mask = std::nullopt) {
  std::string out;
  out.push_back(static_cast<char>(0x80 | op));
  const std::uint8_t m = mask ? 0x80 : 0;
  const std::uint64_t n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<char>(m | n));
  } else if (n <= 0xffff) {
    out.push_back(static_cast<char>(m | 126));
    out.push_back(static_cast<char>(n >> 8));
    out.push_back(static_cast<char>(n & 0xff));
  } else {
    out.push_back(static_cast<char>(m | 127));
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  }
  if (mask) {
    for (auto b : *mask) out.push_back(static_cast<char>(b));
    for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<char>(payload[i] ^ (*mask)[i % 4]));
  } else {
    out.append(payload);
  }
  return out;
}

struct Message {
  Opcode opcode;
  std::string payload;
};

/// Reassembles fragmented data messages; control frames come out as they arrive.
class Decoder {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }

  std::optional<Message> next() {
    while (true) {
      if (buf_.size() < 2) return std::nullopt;
      const auto b0 = static_cast<std::uint8_t>(buf_[0]), b1 = static_cast<std::uint8_t>(buf_[1]);
      const bool fin = b0 & 0x80;
      const auto op = static_cast<Opcode>(b0 & 0x0f);
      const bool masked = b1 & 0x80;
      std::uint64_t n = b1 & 0x7f;
      std::size_t pos = 2;
      if (n == 126) {
        if (buf_.size() < 4) return std::nullopt;
        n = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[2])) << 8) | static_cast<std::uint8_t>(buf_[3]);
        pos = 4;
      } else if (n == 127) {
        if (buf_.size() < 10) return std::nullopt;
        n = 0;
        for (int i = 0; i < 8; ++i) n = (n << 8) | static_cast<std::uint8_t>(buf_[2 + i]);
        pos = 10;
      }
      if (n > kMaxMessageBytes) throw ProtocolError("oversize", "WebSocket frame too large");
      const std::size_t need = pos + (masked ? 4 : 0) + n;
      if (buf_.size() < need) return std::nullopt;
      std::string payload = buf_.substr(pos + (masked ? 4 : 0), n);
      if (masked)
        for (std::size_t i = 0; i < n; ++i) payload[i] ^= buf_[pos + i % 4];
      buf_.erase(0, need);

      if (op >= close) return Message{op, payload};
      if (op == continuation) {
        if (!partial_) throw ProtocolError("malformed", "continuation frame without a start");
        partial_->payload += payload;
      } else {
        if (partial_) throw ProtocolError("malformed", "new data frame inside a fragmented message");
        partial_ = Message{op, payload};
      }
      if (partial_->payload.size() > kMaxMessageBytes) throw ProtocolError("oversize", "WebSocket message too large");
      if (fin) {
        Message m = std::move(*partial_);
        partial_.reset();
        return m;
      }
    }
  }

 private:
  std::string buf_;
  std::optional<Message> partial_;
};

}  // namespace ws

}  // namespace kst
