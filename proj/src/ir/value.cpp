#include "dget/ir/value.hpp"

#include "dget/common/error.hpp"

namespace dget::ir {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string to_display(const Value& v) {
  return std::visit(Overloaded{
                        [](std::int64_t i) { return std::to_string(i); },
                        [](const std::string& s) { return s; },
                        [](bool b) { return std::string(b ? "true" : "false"); },
                        [](const MonitorRef& m) { return "monitor:" + m.id; },
                        [](const ThreadRef& t) { return "thread:" + t.id; },
                    },
                    v);
}

std::string to_literal(const Value& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return quote(*s);
  return to_display(v);
}

Json to_json(const Value& v) {
  return std::visit(Overloaded{
                        [](std::int64_t i) { return Json{{"i", i}}; },
                        [](const std::string& s) { return Json{{"s", s}}; },
                        [](bool b) { return Json{{"b", b}}; },
                        [](const MonitorRef& m) { return Json{{"m", m.id}}; },
                        [](const ThreadRef& t) { return Json{{"t", t.id}}; },
                    },
                    v);
}

Value value_from_json(const Json& j) {
  if (!j.is_object() || j.size() != 1) throw Error(ErrorCode::MalformedField, "value object");
  auto it = j.begin();
  const std::string& tag = it.key();
  const Json& payload = it.value();
  if (tag == "i" && payload.is_number_integer()) return payload.get<std::int64_t>();
  if (tag == "s" && payload.is_string()) return payload.get<std::string>();
  if (tag == "b" && payload.is_boolean()) return payload.get<bool>();
  if (tag == "m" && payload.is_string()) return MonitorRef{payload.get<std::string>()};
  if (tag == "t" && payload.is_string()) return ThreadRef{payload.get<std::string>()};
  throw Error(ErrorCode::MalformedField, "value tag '" + tag + "'");
}

std::string_view type_name(const Value& v) {
  static constexpr std::string_view kNames[] = {"int", "str", "bool", "monitor", "thread"};
  return kNames[v.index()];
}

}  // namespace dget::ir
