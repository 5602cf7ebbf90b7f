#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dget/authz/identity.hpp"
#include "dget/common/canonical.hpp"

namespace dget::nucleus {

inline constexpr std::string_view kFrameTypes[] = {
    "HELLO", "PEERS", "ADVERT", "QUERY", "QUERY_HIT", "LOCATE", "LOCATE_HIT",
    "MSG", "INVOKE", "REPLY", "MIGRATE_OFFER", "MIGRATE_STATE", "MIGRATE_ACK", "ERROR"};

bool known_frame_type(std::string_view type);

/// Largest body accepted from the wire.
inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

struct WireFrame {
  std::string type;
  std::string sender;   // nucleus id
  std::string address;  // sender's wire address, for replies and overlay membership
  Json auth = Json::object();
  Json body = Json::object();
};

Json to_json(const WireFrame& f);
WireFrame frame_from_json(const Json& j);

/// 4-byte big-endian length, then the canonical object text.
std::string encode_frame(const WireFrame& f);
/// Decodes one complete frame (length prefix included). MalformedField on
/// truncation, trailing bytes, oversize or a bad object.
WireFrame decode_frame(std::string_view bytes);

/// Incremental decoder for a byte stream.
class FrameReader {
 public:
  void feed(std::string_view bytes) { buffer_.append(bytes); }
  std::optional<WireFrame> next();
  std::size_t buffered() const { return buffer_.size(); }

 private:
  std::string buffer_;
};

/// Bytes covered by the auth envelope: type, sender, address and body.
std::string signed_payload(const WireFrame& f);

/// Fills f.auth with {"token": ...} signed by `key`, or {"chain": ...} when
/// the key is delegated.
void seal(WireFrame& f, const authz::DelegatedKey& key, Timestamp now);

struct Authenticated {
  authz::VerifyResult result;
  std::string identity;  // leaf identity when accepted
};

Authenticated open(const authz::DomainParams& params, const Json& envelope, std::string_view payload, Timestamp now);
inline Authenticated open(const authz::DomainParams& params, const WireFrame& f, Timestamp now) {
  return open(params, f.auth, signed_payload(f), now);
}

/// Envelope over an arbitrary payload (admin requests).
Json envelope(const authz::DelegatedKey& key, std::string_view payload, Timestamp now);

WireFrame error_frame(ErrorCode code, const std::string& message);

}  // namespace dget::nucleus
