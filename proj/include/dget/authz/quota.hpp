#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "dget/common/canonical.hpp"

namespace dget::authz {

/// Counter names understood by charge_quota.
inline constexpr std::array<std::string_view, 4> kCounters = {"steps", "threads", "messages", "inbox"};

/// name -> limit. A missing entry means unlimited.
using ResourceLimits = std::map<std::string, std::int64_t, std::less<>>;
/// name -> amount consumed so far.
using ResourceUsage = std::map<std::string, std::int64_t, std::less<>>;

enum class QuotaResult { Ok, Exceeded };

bool is_counter(std::string_view name);

/// Adds `amount` to usage[name]. Exceeded iff the new value is above the
/// limit. Throws UnknownCounter for names outside kCounters.
QuotaResult charge_quota(ResourceUsage& usage, const ResourceLimits& limits, std::string_view name,
                         std::int64_t amount);

Json counters_to_json(const std::map<std::string, std::int64_t, std::less<>>& c);
/// Throws MalformedField, or UnknownCounter for unexpected names.
std::map<std::string, std::int64_t, std::less<>> counters_from_json(const Json& j);

}  // namespace dget::authz
