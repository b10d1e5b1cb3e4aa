#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "apfl/core/bytes.hpp"

namespace apfl {

enum class MessageType : std::uint8_t {
  config_request = 1,
  config_reply = 2,
  model_request = 3,
  model_reply = 4,
  update_submit = 5,
  update_reply = 6,
  custom_task = 7,
  error_reply = 8,
};

bool is_known_message_type(std::uint8_t t);
std::string_view message_type_name(MessageType t);

inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kFrameFixedBytes = 12;  // magic, version, type, token_len, payload_len
inline constexpr std::size_t kDefaultMaxPayload = std::size_t{64} << 20;

struct Frame {
  MessageType type = MessageType::config_request;
  std::string token;
  Bytes payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

Bytes encode_frame(const Frame& f);

/// Decodes exactly one frame occupying all of `bytes`. The type byte is passed
/// through unvalidated; dispatch decides what to do with unknown types.
Frame decode_frame(ByteView bytes, std::size_t max_payload = kDefaultMaxPayload);

/// ErrorReply payload: u16 code (big-endian) then the UTF-8 message.
Frame error_frame(Errc code, std::string_view message);
/// Throws the carried error when `f` is an ErrorReply.
void raise_if_error(const Frame& f);

}  // namespace apfl
