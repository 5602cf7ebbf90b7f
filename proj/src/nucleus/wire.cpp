#include "dget/nucleus/wire.hpp"

#include <algorithm>

#include "dget/common/error.hpp"

namespace dget::nucleus {

bool known_frame_type(std::string_view type) {
  return std::find(std::begin(kFrameTypes), std::end(kFrameTypes), type) != std::end(kFrameTypes);
}

Json to_json(const WireFrame& f) {
  return Json{{"type", f.type}, {"sender", f.sender}, {"address", f.address}, {"auth", f.auth}, {"body", f.body}};
}

WireFrame frame_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::MalformedField, "frame is not an object");
  WireFrame f;
  for (const char* key : {"type", "sender", "address"}) {
    if (!j.contains(key) || !j[key].is_string()) throw Error(ErrorCode::MalformedField, std::string("frame ") + key);
  }
  f.type = j["type"].get<std::string>();
  f.sender = j["sender"].get<std::string>();
  f.address = j["address"].get<std::string>();
  f.auth = j.value("auth", Json::object());
  f.body = j.value("body", Json::object());
  if (!f.auth.is_object() || !f.body.is_object()) throw Error(ErrorCode::MalformedField, "frame auth/body");
  return f;
}

std::string encode_frame(const WireFrame& f) {
  auto text = canonical_dump(to_json(f));
  if (text.size() > kMaxFrameBytes) throw Error(ErrorCode::MalformedField, "frame too large");
  auto n = static_cast<std::uint32_t>(text.size());
  std::string out;
  out.reserve(4 + text.size());
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((n >> shift) & 0xff));
  out += text;
  return out;
}

namespace {

std::uint32_t read_length(std::string_view b) {
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n = (n << 8) | static_cast<std::uint8_t>(b[static_cast<std::size_t>(i)]);
  return n;
}

}  // namespace

WireFrame decode_frame(std::string_view bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::MalformedField, "truncated length prefix");
  auto n = read_length(bytes);
  if (n > kMaxFrameBytes) throw Error(ErrorCode::MalformedField, "frame too large");
  if (bytes.size() - 4 != n) throw Error(ErrorCode::MalformedField, "length prefix does not match body");
  return frame_from_json(parse_json(bytes.substr(4)));
}

std::optional<WireFrame> FrameReader::next() {
  if (buffer_.size() < 4) return std::nullopt;
  auto n = read_length(buffer_);
  if (n > kMaxFrameBytes) throw Error(ErrorCode::MalformedField, "frame too large");
  if (buffer_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
  auto f = decode_frame(std::string_view(buffer_).substr(0, 4 + n));
  buffer_.erase(0, 4 + n);
  return f;
}

std::string signed_payload(const WireFrame& f) {
  return canonical_dump(Json{{"type", f.type}, {"sender", f.sender}, {"address", f.address}, {"body", f.body}});
}

Json envelope(const authz::DelegatedKey& key, std::string_view payload, Timestamp now) {
  if (key.links.empty()) return Json{{"token", authz::to_json(authz::sign(key.key, payload, now))}};
  return Json{{"chain", authz::to_json(authz::sign_delegated(key, payload, now))}};
}

void seal(WireFrame& f, const authz::DelegatedKey& key, Timestamp now) { f.auth = envelope(key, signed_payload(f), now); }

Authenticated open(const authz::DomainParams& params, const Json& env, std::string_view payload, Timestamp now) {
  Authenticated a;
  try {
    if (env.is_object() && env.contains("token")) {
      auto token = authz::token_from_json(env["token"]);
      a.result = authz::verify(params, token, payload, now);
      a.identity = token.identity;
    } else if (env.is_object() && env.contains("chain")) {
      auto chain = authz::chain_from_json(env["chain"]);
      a.result = authz::verify_chain(params, chain, payload, now);
      a.identity = chain.token.identity;
    } else {
      a.result = {false, ErrorCode::AuthFailed};
    }
  } catch (const Error&) {
    a.result = {false, ErrorCode::MalformedField};
  }
  if (!a.result) a.identity.clear();
  return a;
}

WireFrame error_frame(ErrorCode code, const std::string& message) {
  WireFrame f;
  f.type = "ERROR";
  f.body = Json{{"code", std::string(code_name(code))}, {"message", message}};
  return f;
}

}  // namespace dget::nucleus
