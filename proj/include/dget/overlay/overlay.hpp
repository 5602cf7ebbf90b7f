#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "dget/common/canonical.hpp"
#include "dget/common/clock.hpp"

namespace dget::overlay {

using Attribute = std::variant<std::int64_t, std::string>;
using Descriptor = std::map<std::string, Attribute>;

enum class PredOp { Eq, Ne, Lt, Gt, Prefix };

struct Predicate {
  std::string name;
  PredOp op = PredOp::Eq;
  Attribute value;
  bool operator==(const Predicate&) const = default;
};

/// Conjunction of predicates, e.g. "cores>2 && os=linux && host^=grid".
struct Expression {
  std::vector<Predicate> terms;
  bool operator==(const Expression&) const = default;
};

/// Throws BadRequest on malformed text.
Expression parse_expression(std::string_view text);
std::string to_text(const Expression& e);
bool matches(const Expression& e, const Descriptor& d);

struct NodeInfo {
  std::string id;
  std::string address;
  bool operator==(const NodeInfo&) const = default;
};

struct Advert {
  NodeInfo origin;
  Descriptor descriptor;
  std::uint64_t seqno = 0;
  Timestamp expiry = 0;
  bool operator==(const Advert&) const = default;
};

struct QueryHit {
  std::string query_id;
  Advert advert;
  bool operator==(const QueryHit&) const = default;
};

struct LocationRecord {
  std::string entity;
  std::string address;
  std::uint64_t version = 0;
  Timestamp expiry = 0;
  bool operator==(const LocationRecord&) const = default;
};

/// Overlay message. `type` is one of HELLO, PEERS, ADVERT, QUERY, QUERY_HIT,
/// LOCATE, LOCATE_HIT; the body is canonical-encodable.
struct Frame {
  std::string type;
  NodeInfo from;
  Json body;
};

struct Outgoing {
  std::string to;  // address
  Frame frame;
};

struct OverlayConfig {
  std::size_t fanout = 3;
  int ttl_default = 4;
  Timestamp advert_lifetime = 120;
  Timestamp location_lifetime = 600;
  Timestamp dead_after = 30;
  std::size_t peer_cap = 64;
  std::size_t advert_cap = 1024;
};

struct PeerEntry {
  NodeInfo info;
  Timestamp last_seen = 0;
};

/// Transport-independent state machine of one nucleus's overlay: every call
/// returns the frames to transmit.
class OverlayNode {
 public:
  OverlayNode(NodeInfo self, OverlayConfig config, const Clock& clock, std::uint64_t seed = 0);

  const NodeInfo& self() const { return self_; }
  const OverlayConfig& config() const { return config_; }

  void add_peer(const NodeInfo& peer);
  std::vector<Outgoing> hello(const std::vector<std::string>& bootstrap);
  /// Ages out silent peers, purges expired adverts and records, and sends
  /// the peer list to `fanout` random peers.
  std::vector<Outgoing> gossip_tick();
  void purge();

  std::vector<Outgoing> publish_advert(const Descriptor& descriptor, std::optional<int> ttl = std::nullopt);
  /// Returns the query id; hits arrive through handle() and are read with hits().
  std::string query(const Expression& expr, int ttl, std::vector<Outgoing>& out);
  std::vector<QueryHit> hits(const std::string& query_id) const;

  std::string locate(const std::string& entity, int ttl, std::vector<Outgoing>& out);
  /// Best record known locally (own table plus LOCATE_HIT replies).
  std::optional<LocationRecord> location(const std::string& entity) const;
  std::vector<Outgoing> update_location(const std::string& entity, const std::string& address, std::uint64_t version,
                                        std::optional<int> ttl = std::nullopt);

  std::vector<Outgoing> handle(const Frame& frame);

  std::vector<PeerEntry> peers() const;
  std::vector<Advert> adverts() const;
  std::vector<LocationRecord> locations() const;
  std::uint64_t processed() const { return processed_; }

 private:
  /// Direct replies refresh a known peer without admitting the sender.
  void seen(const NodeInfo& n, bool admit);
  void flood(const Frame& f, const std::string& except, std::vector<Outgoing>& out) const;
  bool install_advert(const Advert& a);
  bool install_location(const LocationRecord& r);
  std::string next_id();

  NodeInfo self_;
  OverlayConfig config_;
  const Clock& clock_;
  std::mt19937_64 rng_;
  std::map<std::string, PeerEntry> peers_;  // by address
  std::map<std::string, Advert> adverts_;   // by origin id
  std::map<std::string, LocationRecord> locations_;
  std::set<std::string> seen_queries_;
  std::map<std::string, std::map<std::string, QueryHit>> hits_;  // query id -> origin id -> hit
  std::uint64_t seqno_ = 0;
  std::uint64_t counter_ = 0;
  std::uint64_t processed_ = 0;
};

Json to_json(const Descriptor& d);
Descriptor descriptor_from_json(const Json& j);
Json to_json(const Advert& a);
Advert advert_from_json(const Json& j);
Json to_json(const LocationRecord& r);
LocationRecord location_from_json(const Json& j);
Json to_json(const NodeInfo& n);
NodeInfo node_from_json(const Json& j);

/// In-process bus with a virtual clock. Links are implicit: any node can
/// reach any address it knows.
class SimNetwork {
 public:
  explicit SimNetwork(Timestamp start = 1000) : clock_(start) {}

  OverlayNode& add(const std::string& id, OverlayConfig config = {}, std::uint64_t seed = 0);
  OverlayNode& node(const std::string& id);
  VirtualClock& clock() { return clock_; }

  void send(std::vector<Outgoing> frames);
  /// Delivers queued frames until none remain. Returns frames delivered.
  std::size_t run_until_idle(std::size_t cap = 1'000'000);
  void tick_all();
  std::size_t delivered() const { return delivered_; }

 private:
  VirtualClock clock_;
  std::map<std::string, std::unique_ptr<OverlayNode>> nodes_;  // by id
  std::map<std::string, OverlayNode*> by_address_;
  std::vector<Outgoing> queue_;
  std::size_t delivered_ = 0;
};

}  // namespace dget::overlay
