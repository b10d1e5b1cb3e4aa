#include "apfl/comm/frame.hpp"

#include <algorithm>

namespace apfl {

bool is_known_message_type(std::uint8_t t) { return t >= 1 && t <= 8; }

std::string_view message_type_name(MessageType t) {
  switch (t) {
    case MessageType::config_request: return "ConfigRequest";
    case MessageType::config_reply: return "ConfigReply";
    case MessageType::model_request: return "ModelRequest";
    case MessageType::model_reply: return "ModelReply";
    case MessageType::update_submit: return "UpdateSubmit";
    case MessageType::update_reply: return "UpdateReply";
    case MessageType::custom_task: return "CustomTask";
    case MessageType::error_reply: return "ErrorReply";
  }
  return "Unknown";
}

Bytes encode_frame(const Frame& f) {
  if (f.token.size() > 0xFFFF) fail(Errc::invalid_argument, "token longer than 65535 bytes");
  if (f.payload.size() > 0xFFFFFFFFu) fail(Errc::oversized_payload, "payload exceeds u32 length");
  Bytes out;
  out.reserve(kFrameFixedBytes + f.token.size() + f.payload.size());
  ByteWriter w(out);
  w.raw(std::string_view("APFL"));
  w.u8(kFrameVersion);
  w.u8(static_cast<std::uint8_t>(f.type));
  w.u16be(static_cast<std::uint16_t>(f.token.size()));
  w.raw(std::string_view(f.token));
  w.u32be(static_cast<std::uint32_t>(f.payload.size()));
  w.raw(f.payload);
  return out;
}

Frame decode_frame(ByteView bytes, std::size_t max_payload) {
  ByteReader r(bytes, Errc::length_mismatch);
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "APFL")) fail(Errc::bad_magic, "bad frame magic");
  r.take(4);
  if (r.u8() != kFrameVersion) fail(Errc::unsupported_version, "unsupported frame version");
  Frame f;
  f.type = static_cast<MessageType>(r.u8());
  f.token = r.str(r.u16be());
  const std::uint32_t len = r.u32be();
  if (len > max_payload) fail(Errc::oversized_payload, "frame payload of " + std::to_string(len) + " bytes over limit");
  if (r.remaining() != len) fail(Errc::length_mismatch, "declared payload length disagrees with frame size");
  const ByteView p = r.take(len);
  f.payload.assign(p.begin(), p.end());
  return f;
}

Frame error_frame(Errc code, std::string_view message) {
  Frame f;
  f.type = MessageType::error_reply;
  ByteWriter w(f.payload);
  w.u16be(static_cast<std::uint16_t>(code));
  w.raw(message);
  return f;
}

void raise_if_error(const Frame& f) {
  if (f.type != MessageType::error_reply) return;
  ByteReader r(f.payload, Errc::protocol_error);
  const auto code = static_cast<Errc>(r.u16be());
  fail(code, "remote: " + r.str(r.remaining()));
}

}  // namespace apfl
