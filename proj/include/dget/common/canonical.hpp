#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace dget {

using Json = nlohmann::json;
using Bytes = std::vector<std::uint8_t>;

/// Canonical textual object encoding: keys sorted (nlohmann's object_t is an
/// ordered std::map), no insignificant whitespace, integers in plain decimal,
/// UTF-8 passed through unescaped. Floating point is never produced by this
/// code base.
std::string canonical_dump(const Json& value);

/// Parses text produced by canonical_dump (or any JSON). Throws
/// Error(MalformedField) on syntax errors.
Json parse_json(std::string_view text);

/// SHA-256 of `data`, lowercase hex.
std::string sha256_hex(std::string_view data);

/// HMAC-SHA256(key, data), raw bytes.
Bytes hmac_sha256(std::span<const std::uint8_t> key, std::string_view data);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::string base64_encode(std::span<const std::uint8_t> bytes);
Bytes base64_decode(std::string_view text);

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

}  // namespace dget
