#include "dget/overlay/overlay.hpp"

#include <algorithm>

#include "dget/common/error.hpp"

namespace dget::overlay {
namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

Attribute parse_attribute(const std::string& text) {
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') return text.substr(1, text.size() - 2);
  auto digits = text.find_first_not_of("0123456789", text[0] == '-' ? 1 : 0);
  if (!text.empty() && digits == std::string::npos && text != "-") {
    try {
      return static_cast<std::int64_t>(std::stoll(text));
    } catch (const std::out_of_range&) {
      throw Error(ErrorCode::BadRequest, "number out of range: " + text);
    }
  }
  return text;
}

std::string attribute_text(const Attribute& a) {
  if (const auto* i = std::get_if<std::int64_t>(&a)) return std::to_string(*i);
  const auto& s = std::get<std::string>(a);
  auto numeric = !s.empty() && s.find_first_not_of("0123456789", s[0] == '-' ? 1 : 0) == std::string::npos;
  return numeric ? "\"" + s + "\"" : s;
}

constexpr std::pair<std::string_view, PredOp> kOps[] = {
    {"!=", PredOp::Ne}, {"^=", PredOp::Prefix}, {"=", PredOp::Eq}, {"<", PredOp::Lt}, {">", PredOp::Gt}};

std::string_view op_text(PredOp op) {
  for (const auto& [t, o] : kOps) {
    if (o == op) return t;
  }
  return "=";
}

Json attribute_json(const Attribute& a) {
  if (const auto* i = std::get_if<std::int64_t>(&a)) return *i;
  return std::get<std::string>(a);
}

std::string str(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string()) throw Error(ErrorCode::MalformedField, key);
  return j[key].get<std::string>();
}

std::int64_t num(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_number_integer()) throw Error(ErrorCode::MalformedField, key);
  return j[key].get<std::int64_t>();
}

}  // namespace

Expression parse_expression(std::string_view text) {
  Expression e;
  std::string src(text);
  for (std::string::size_type pos = 0; (pos = src.find("&&", pos)) != std::string::npos;) src.replace(pos, 2, ",");
  std::size_t start = 0;
  while (start <= src.size()) {
    auto comma = src.find(',', start);
    auto term = trim(std::string_view(src).substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    start = comma == std::string::npos ? src.size() + 1 : comma + 1;
    if (term.empty()) {
      if (src.find_first_not_of(" \t,") == std::string::npos && e.terms.empty() && comma == std::string::npos) break;
      throw Error(ErrorCode::BadRequest, "empty term in expression '" + std::string(text) + "'");
    }
    std::size_t best = std::string::npos;
    PredOp op = PredOp::Eq;
    std::size_t len = 0;
    for (const auto& [t, o] : kOps) {
      auto at = term.find(t);
      if (at != std::string::npos && (best == std::string::npos || at < best)) {
        best = at;
        op = o;
        len = t.size();
      }
    }
    if (best == std::string::npos) throw Error(ErrorCode::BadRequest, "no operator in '" + term + "'");
    auto name = trim(std::string_view(term).substr(0, best));
    auto value = trim(std::string_view(term).substr(best + len));
    if (name.empty() || value.empty()) throw Error(ErrorCode::BadRequest, "incomplete term '" + term + "'");
    e.terms.push_back(Predicate{name, op, parse_attribute(value)});
  }
  return e;
}

std::string to_text(const Expression& e) {
  std::string out;
  for (const auto& p : e.terms) {
    if (!out.empty()) out += " && ";
    out += p.name + std::string(op_text(p.op)) + attribute_text(p.value);
  }
  return out;
}

bool matches(const Expression& e, const Descriptor& d) {
  for (const auto& p : e.terms) {
    auto it = d.find(p.name);
    if (it == d.end()) return false;
    const auto& have = it->second;
    bool same_type = have.index() == p.value.index();
    bool ok = false;
    switch (p.op) {
      case PredOp::Eq: ok = have == p.value; break;
      case PredOp::Ne: ok = have != p.value; break;
      case PredOp::Lt: ok = same_type && have < p.value; break;
      case PredOp::Gt: ok = same_type && p.value < have; break;
      case PredOp::Prefix:
        ok = same_type && std::holds_alternative<std::string>(have) &&
             std::get<std::string>(have).rfind(std::get<std::string>(p.value), 0) == 0;
        break;
    }
    if (!ok) return false;
  }
  return true;
}

Json to_json(const Descriptor& d) {
  Json j = Json::object();
  for (const auto& [k, v] : d) j[k] = attribute_json(v);
  return j;
}

Descriptor descriptor_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::MalformedField, "descriptor");
  Descriptor d;
  for (const auto& [k, v] : j.items()) {
    if (v.is_number_integer()) {
      d[k] = v.get<std::int64_t>();
    } else if (v.is_string()) {
      d[k] = v.get<std::string>();
    } else {
      throw Error(ErrorCode::MalformedField, "descriptor attribute " + k);
    }
  }
  return d;
}

Json to_json(const NodeInfo& n) { return Json{{"id", n.id}, {"address", n.address}}; }
NodeInfo node_from_json(const Json& j) { return NodeInfo{str(j, "id"), str(j, "address")}; }

Json to_json(const Advert& a) {
  return Json{{"origin", to_json(a.origin)},
              {"descriptor", to_json(a.descriptor)},
              {"seqno", a.seqno},
              {"expiry", a.expiry}};
}

Advert advert_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("origin") || !j.contains("descriptor")) throw Error(ErrorCode::MalformedField, "advert");
  return Advert{node_from_json(j["origin"]), descriptor_from_json(j["descriptor"]),
                static_cast<std::uint64_t>(num(j, "seqno")), num(j, "expiry")};
}

Json to_json(const LocationRecord& r) {
  return Json{{"entity", r.entity}, {"address", r.address}, {"version", r.version}, {"expiry", r.expiry}};
}

LocationRecord location_from_json(const Json& j) {
  return LocationRecord{str(j, "entity"), str(j, "address"), static_cast<std::uint64_t>(num(j, "version")),
                        num(j, "expiry")};
}

OverlayNode::OverlayNode(NodeInfo self, OverlayConfig config, const Clock& clock, std::uint64_t seed)
    : self_(std::move(self)),
      config_(config),
      clock_(clock),
      rng_(seed),
      seqno_(static_cast<std::uint64_t>(std::max<Timestamp>(0, clock.now())) * 1000) {}

void OverlayNode::add_peer(const NodeInfo& peer) {
  if (peer.address == self_.address || peer.address.empty()) return;
  auto it = peers_.find(peer.address);
  if (it != peers_.end()) {
    it->second.info = peer;
    return;
  }
  if (peers_.size() >= config_.peer_cap) return;
  peers_[peer.address] = PeerEntry{peer, clock_.now()};
}

void OverlayNode::seen(const NodeInfo& n, bool admit) {
  if (admit) add_peer(n);
  auto it = peers_.find(n.address);
  if (it != peers_.end()) it->second.last_seen = clock_.now();
}

std::vector<Outgoing> OverlayNode::hello(const std::vector<std::string>& bootstrap) {
  std::vector<Outgoing> out;
  for (const auto& addr : bootstrap) {
    if (addr == self_.address) continue;
    out.push_back({addr, Frame{"HELLO", self_, Json::object()}});
  }
  return out;
}

void OverlayNode::purge() {
  auto now = clock_.now();
  std::erase_if(adverts_, [&](const auto& kv) { return kv.second.expiry < now; });
  std::erase_if(locations_, [&](const auto& kv) { return kv.second.expiry < now; });
}

std::vector<Outgoing> OverlayNode::gossip_tick() {
  purge();
  auto now = clock_.now();
  std::erase_if(peers_, [&](const auto& kv) { return now - kv.second.last_seen > config_.dead_after; });
  std::vector<Outgoing> out;
  if (peers_.empty()) return out;
  Json list = Json::array();
  list.push_back(to_json(self_));
  for (const auto& [addr, p] : peers_) list.push_back(to_json(p.info));
  std::vector<std::string> addrs;
  for (const auto& [addr, p] : peers_) addrs.push_back(addr);
  std::shuffle(addrs.begin(), addrs.end(), rng_);
  addrs.resize(std::min(addrs.size(), config_.fanout));
  for (const auto& a : addrs) out.push_back({a, Frame{"PEERS", self_, Json{{"peers", list}}}});
  return out;
}

void OverlayNode::flood(const Frame& f, const std::string& except, std::vector<Outgoing>& out) const {
  for (const auto& [addr, p] : peers_) {
    if (addr != except) out.push_back({addr, f});
  }
}

bool OverlayNode::install_advert(const Advert& a) {
  if (a.expiry < clock_.now()) return false;
  auto it = adverts_.find(a.origin.id);
  if (it != adverts_.end() && it->second.seqno >= a.seqno) return false;
  if (it == adverts_.end() && adverts_.size() >= config_.advert_cap) return false;
  adverts_[a.origin.id] = a;
  return true;
}

bool OverlayNode::install_location(const LocationRecord& r) {
  if (r.expiry < clock_.now()) return false;
  auto it = locations_.find(r.entity);
  if (it != locations_.end() && it->second.version >= r.version) {
    if (it->second.version == r.version && it->second.address == r.address && r.expiry > it->second.expiry) {
      it->second.expiry = r.expiry;
    }
    return false;
  }
  locations_[r.entity] = r;
  return true;
}

std::string OverlayNode::next_id() { return self_.id + "#" + std::to_string(++counter_); }

std::vector<Outgoing> OverlayNode::publish_advert(const Descriptor& descriptor, std::optional<int> ttl) {
  Advert a{self_, descriptor, ++seqno_, clock_.now() + config_.advert_lifetime};
  install_advert(a);
  std::vector<Outgoing> out;
  int t = ttl.value_or(config_.ttl_default);
  if (t >= 1) flood(Frame{"ADVERT", self_, Json{{"kind", "resource"}, {"advert", to_json(a)}, {"ttl", t}}}, "", out);
  return out;
}

std::string OverlayNode::query(const Expression& expr, int ttl, std::vector<Outgoing>& out) {
  if (ttl < 1) throw Error(ErrorCode::BadRequest, "query ttl must be at least 1");
  auto id = next_id();
  seen_queries_.insert(id);
  auto& mine = hits_[id];
  for (const auto& [origin, a] : adverts_) {
    if (matches(expr, a.descriptor)) mine[origin] = QueryHit{id, a};
  }
  {
    flood(Frame{"QUERY", self_, Json{{"id", id}, {"expr", to_text(expr)}, {"ttl", ttl}, {"origin", to_json(self_)}}},
          "", out);
  }
  return id;
}

std::vector<QueryHit> OverlayNode::hits(const std::string& query_id) const {
  std::vector<QueryHit> out;
  auto it = hits_.find(query_id);
  if (it == hits_.end()) return out;
  for (const auto& [origin, h] : it->second) out.push_back(h);
  return out;
}

std::string OverlayNode::locate(const std::string& entity, int ttl, std::vector<Outgoing>& out) {
  if (ttl < 0) throw Error(ErrorCode::BadRequest, "ttl must be non-negative");
  auto id = next_id();
  seen_queries_.insert(id);
  if (ttl >= 1) {
    flood(Frame{"LOCATE", self_, Json{{"id", id}, {"entity", entity}, {"ttl", ttl}, {"origin", to_json(self_)}}}, "",
          out);
  }
  return id;
}

std::optional<LocationRecord> OverlayNode::location(const std::string& entity) const {
  auto it = locations_.find(entity);
  if (it == locations_.end() || it->second.expiry < clock_.now()) return std::nullopt;
  return it->second;
}

std::vector<Outgoing> OverlayNode::update_location(const std::string& entity, const std::string& address,
                                                   std::uint64_t version, std::optional<int> ttl) {
  LocationRecord r{entity, address, version, clock_.now() + config_.location_lifetime};
  std::vector<Outgoing> out;
  if (!install_location(r)) return out;
  int t = ttl.value_or(config_.ttl_default);
  if (t >= 1) flood(Frame{"ADVERT", self_, Json{{"kind", "location"}, {"record", to_json(r)}, {"ttl", t}}}, "", out);
  return out;
}

std::vector<Outgoing> OverlayNode::handle(const Frame& frame) {
  std::vector<Outgoing> out;
  if (frame.from.address == self_.address) return out;
  seen(frame.from, frame.type != "QUERY_HIT" && frame.type != "LOCATE_HIT");
  const auto& b = frame.body;
  if (frame.type == "HELLO" || frame.type == "PEERS") {
    if (b.is_object() && b.contains("peers") && b["peers"].is_array()) {
      for (const auto& p : b["peers"]) add_peer(node_from_json(p));
    }
    if (frame.type == "HELLO") {
      Json list = Json::array();
      list.push_back(to_json(self_));
      for (const auto& [addr, p] : peers_) list.push_back(to_json(p.info));
      out.push_back({frame.from.address, Frame{"PEERS", self_, Json{{"peers", list}}}});
    }
    return out;
  }
  if (frame.type == "ADVERT") {
    auto ttl = num(b, "ttl");
    auto kind = str(b, "kind");
    bool fresh = false;
    if (kind == "resource") {
      fresh = install_advert(advert_from_json(b.at("advert")));
    } else if (kind == "location") {
      fresh = install_location(location_from_json(b.at("record")));
    } else {
      throw Error(ErrorCode::MalformedField, "advert kind " + kind);
    }
    if (!fresh) return out;
    ++processed_;
    if (ttl > 1) {
      Frame next{"ADVERT", self_, b};
      next.body["ttl"] = ttl - 1;
      flood(next, frame.from.address, out);
    }
    return out;
  }
  if (frame.type == "QUERY" || frame.type == "LOCATE") {
    auto id = str(b, "id");
    if (!seen_queries_.insert(id).second) return out;
    ++processed_;
    auto ttl = num(b, "ttl");
    auto origin = node_from_json(b.at("origin"));
    if (frame.type == "QUERY") {
      auto expr = parse_expression(str(b, "expr"));
      Json found = Json::array();
      for (const auto& [o, a] : adverts_) {
        if (a.expiry >= clock_.now() && matches(expr, a.descriptor)) found.push_back(to_json(a));
      }
      if (!found.empty()) out.push_back({origin.address, Frame{"QUERY_HIT", self_, Json{{"id", id}, {"hits", found}}}});
    } else if (auto rec = location(str(b, "entity"))) {
      out.push_back({origin.address, Frame{"LOCATE_HIT", self_, Json{{"id", id}, {"record", to_json(*rec)}}}});
    }
    if (ttl > 1) {
      Frame next{frame.type, self_, b};
      next.body["ttl"] = ttl - 1;
      flood(next, frame.from.address, out);
    }
    return out;
  }
  if (frame.type == "QUERY_HIT") {
    auto id = str(b, "id");
    auto it = hits_.find(id);
    if (it == hits_.end()) return out;
    for (const auto& h : b.at("hits")) {
      auto a = advert_from_json(h);
      auto cur = it->second.find(a.origin.id);
      if (cur == it->second.end() || cur->second.advert.seqno < a.seqno) it->second[a.origin.id] = QueryHit{id, a};
    }
    return out;
  }
  if (frame.type == "LOCATE_HIT") {
    install_location(location_from_json(b.at("record")));
    return out;
  }
  throw Error(ErrorCode::MalformedField, "unknown overlay frame type " + frame.type);
}

std::vector<PeerEntry> OverlayNode::peers() const {
  std::vector<PeerEntry> out;
  for (const auto& [a, p] : peers_) out.push_back(p);
  return out;
}

std::vector<Advert> OverlayNode::adverts() const {
  std::vector<Advert> out;
  for (const auto& [o, a] : adverts_) out.push_back(a);
  return out;
}

std::vector<LocationRecord> OverlayNode::locations() const {
  std::vector<LocationRecord> out;
  for (const auto& [e, r] : locations_) out.push_back(r);
  return out;
}

OverlayNode& SimNetwork::add(const std::string& id, OverlayConfig config, std::uint64_t seed) {
  auto node = std::make_unique<OverlayNode>(NodeInfo{id, "sim://" + id}, config, clock_, seed);
  auto* raw = node.get();
  nodes_[id] = std::move(node);
  by_address_[raw->self().address] = raw;
  return *raw;
}

OverlayNode& SimNetwork::node(const std::string& id) { return *nodes_.at(id); }

void SimNetwork::send(std::vector<Outgoing> frames) {
  for (auto& f : frames) queue_.push_back(std::move(f));
}

std::size_t SimNetwork::run_until_idle(std::size_t cap) {
  std::size_t n = 0;
  std::size_t head = 0;
  while (head < queue_.size() && n < cap) {
    auto msg = std::move(queue_[head++]);
    auto it = by_address_.find(msg.to);
    if (it == by_address_.end()) continue;
    auto more = it->second->handle(msg.frame);
    ++n;
    for (auto& m : more) queue_.push_back(std::move(m));
  }
  queue_.erase(queue_.begin(), queue_.begin() + static_cast<std::ptrdiff_t>(head));
  delivered_ += n;
  return n;
}

void SimNetwork::tick_all() {
  for (auto& [id, node] : nodes_) send(node->gossip_tick());
}

}  // namespace dget::overlay
