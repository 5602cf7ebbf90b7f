#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <variant>

#include "dget/common/canonical.hpp"

namespace dget::ir {

struct MonitorRef {
  std::string id;
  auto operator<=>(const MonitorRef&) const = default;
};

struct ThreadRef {
  std::string id;
  auto operator<=>(const ThreadRef&) const = default;
};

/// Runtime value of the ghost machine. Alternative order is part of the
/// canonical encoding tags below; do not reorder.
using Value = std::variant<std::int64_t, std::string, bool, MonitorRef, ThreadRef>;

inline Value int_value(std::int64_t v) { return Value{v}; }
inline Value str_value(std::string s) { return Value{std::move(s)}; }

/// Text used by SYS log and string concatenation.
std::string to_display(const Value& v);

/// Assembly literal: 42, -1, true, "text", monitor:m, thread:t1.
std::string to_literal(const Value& v);

/// Tagged canonical object: {"i":42} {"s":"x"} {"b":true} {"m":"id"} {"t":"id"}.
Json to_json(const Value& v);
Value value_from_json(const Json& j);

std::string_view type_name(const Value& v);

}  // namespace dget::ir
