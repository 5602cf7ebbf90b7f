#include "dget/authz/quota.hpp"

#include "dget/common/error.hpp"

namespace dget::authz {

bool is_counter(std::string_view name) {
  for (auto c : kCounters) {
    if (c == name) return true;
  }
  return false;
}

QuotaResult charge_quota(ResourceUsage& usage, const ResourceLimits& limits, std::string_view name,
                         std::int64_t amount) {
  if (!is_counter(name)) throw Error(ErrorCode::UnknownCounter, std::string(name));
  if (amount < 0) throw Error(ErrorCode::BadRequest, "negative charge");
  auto it = usage.find(name);
  if (it == usage.end()) it = usage.emplace(std::string(name), 0).first;
  it->second += amount;
  auto lim = limits.find(name);
  if (lim == limits.end()) return QuotaResult::Ok;
  return it->second > lim->second ? QuotaResult::Exceeded : QuotaResult::Ok;
}

Json counters_to_json(const std::map<std::string, std::int64_t, std::less<>>& c) {
  Json j = Json::object();
  for (const auto& [k, v] : c) j[k] = v;
  return j;
}

std::map<std::string, std::int64_t, std::less<>> counters_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::MalformedField, "counter set must be an object");
  std::map<std::string, std::int64_t, std::less<>> out;
  for (const auto& [k, v] : j.items()) {
    if (!is_counter(k)) throw Error(ErrorCode::UnknownCounter, k);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw Error(ErrorCode::MalformedField, "counter '" + k + "' must be a non-negative integer");
    }
    out[k] = v.get<std::int64_t>();
  }
  return out;
}

}  // namespace dget::authz
