#include "dget/authz/identity.hpp"

#include <algorithm>

#include <openssl/crypto.h>
#include <openssl/rand.h>

namespace dget::authz {
namespace {

const HmacTestBackend kHmacBackend;

Bytes hmac(std::span<const std::uint8_t> key, std::string_view data) { return hmac_sha256(key, data); }

std::string domain_of(std::string_view identity) {
  auto at = identity.find('@');
  if (at == std::string_view::npos || at == 0 || at + 1 == identity.size() ||
      identity.find('@', at + 1) != std::string_view::npos) {
    throw Error(ErrorCode::BadRequest, "identity '" + std::string(identity) + "' is not name@domain");
  }
  return std::string(identity.substr(at + 1));
}

std::string window_text(const Window& w) { return canonical_dump(to_json(w)); }

const SignatureBackend& backend_of(const DomainParams& p) {
  const auto* b = find_backend(p.backend);
  if (!b) throw Error(ErrorCode::BadConfig, "unknown signature backend '" + p.backend + "'");
  return *b;
}

std::string token_message(const IdentityToken& t) {
  return canonical_dump(
      Json{{"identity", t.identity}, {"window", to_json(t.window)}, {"payload_digest", t.payload_digest}});
}

void check_time(const Window& w, Timestamp now) {
  if (now < w.not_before) throw Error(ErrorCode::NotYetValid, "key not valid before " + std::to_string(w.not_before));
  if (now > w.not_after) throw Error(ErrorCode::Expired, "key expired at " + std::to_string(w.not_after));
}

VerifyResult reject(ErrorCode why) { return VerifyResult{false, why}; }

Bytes bytes_field(const Json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw Error(ErrorCode::MalformedField, key);
  return base64_decode(j[key].get<std::string>());
}

std::string string_field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string()) throw Error(ErrorCode::MalformedField, key);
  return j[key].get<std::string>();
}

}  // namespace

SignatureBackend::Setup HmacTestBackend::setup(const std::string& domain, std::span<const std::uint8_t> seed) const {
  Setup s;
  if (seed.empty()) {
    s.master.resize(32);
    if (RAND_bytes(s.master.data(), static_cast<int>(s.master.size())) != 1) {
      throw Error(ErrorCode::BadConfig, "no entropy for PKG master secret");
    }
  } else {
    s.master = hmac(seed, "dget-pkg|" + domain);
  }
  s.params = DomainParams{domain, name(), s.master};
  return s;
}

Bytes HmacTestBackend::extract(std::span<const std::uint8_t> master, std::string_view identity,
                               const Window& w) const {
  return hmac(master, canonical_dump(Json{{"identity", identity}, {"window", to_json(w)}}));
}

Bytes HmacTestBackend::derive(std::span<const std::uint8_t> parent_secret, std::string_view link_body) const {
  return hmac(parent_secret, "proxy|" + std::string(link_body));
}

Bytes HmacTestBackend::sign(std::span<const std::uint8_t> secret, std::string_view message) const {
  return hmac(secret, message);
}

bool HmacTestBackend::verify(const DomainParams& params, std::string_view identity, const Window& w,
                             const std::vector<std::string>& delegation, std::string_view message,
                             std::span<const std::uint8_t> signature) const {
  auto secret = extract(params.public_data, identity, w);
  for (const auto& body : delegation) secret = derive(secret, body);
  auto expect = hmac(secret, message);
  return expect.size() == signature.size() && CRYPTO_memcmp(expect.data(), signature.data(), expect.size()) == 0;
}

const SignatureBackend* find_backend(std::string_view name) {
  if (name == kHmacBackend.name()) return &kHmacBackend;
  return nullptr;
}

std::string DelegationLink::body() const {
  return canonical_dump(Json{{"parent", parent},
                             {"child", child},
                             {"parent_window", to_json(parent_window)},
                             {"window", to_json(window)}});
}

PkgState pkg_init(const std::string& domain, const SignatureBackend& backend, std::span<const std::uint8_t> seed) {
  if (domain.empty() || domain.find('@') != std::string::npos) throw Error(ErrorCode::BadConfig, "domain '" + domain + "'");
  auto s = backend.setup(domain, seed);
  return PkgState{domain, find_backend(backend.name()) ? find_backend(backend.name()) : &backend, std::move(s.master),
                  std::move(s.params)};
}

IdentityKey issue_identity(const PkgState& pkg, const std::string& identity, const Window& window) {
  std::string dom;
  try {
    dom = domain_of(identity);
  } catch (const Error&) {
    throw Error(ErrorCode::WrongDomain, "identity '" + identity + "' is not name@" + pkg.domain);
  }
  if (dom != pkg.domain) throw Error(ErrorCode::WrongDomain, identity + " is not in domain " + pkg.domain);
  if (!(window.not_before < window.not_after)) throw Error(ErrorCode::InvalidWindow, window_text(window));
  return IdentityKey{identity, window, pkg.backend->extract(pkg.master, identity, window), pkg.params};
}

IdentityToken sign(const IdentityKey& key, std::string_view payload, Timestamp now) {
  check_time(key.window, now);
  IdentityToken t{key.identity, key.window, sha256_hex(payload), {}};
  t.signature = backend_of(key.params).sign(key.secret, token_message(t));
  return t;
}

VerifyResult verify(const DomainParams& params, const IdentityToken& token, std::string_view payload, Timestamp now) {
  const auto* backend = find_backend(params.backend);
  if (!backend) return reject(ErrorCode::SignatureInvalid);
  auto at = token.identity.rfind('@');
  if (at == std::string::npos || token.identity.substr(at + 1) != params.domain) {
    return reject(ErrorCode::SignatureInvalid);
  }
  if (sha256_hex(payload) != token.payload_digest) return reject(ErrorCode::SignatureInvalid);
  if (!backend->verify(params, token.identity, token.window, {}, token_message(token), token.signature)) {
    return reject(ErrorCode::SignatureInvalid);
  }
  if (now < token.window.not_before) return reject(ErrorCode::NotYetValid);
  if (now > token.window.not_after) return reject(ErrorCode::Expired);
  return VerifyResult{true, ErrorCode::BadRequest};
}

DelegatedKey delegate(const DelegatedKey& parent, const std::string& child, const Window& window, Timestamp now) {
  check_time(parent.key.window, now);
  domain_of(child);
  if (window.not_before > window.not_after) throw Error(ErrorCode::InvalidWindow, window_text(window));
  if (!window.within(parent.key.window)) {
    throw Error(ErrorCode::WindowNotNested, window_text(window) + " is not inside " + window_text(parent.key.window));
  }
  const auto& backend = backend_of(parent.key.params);
  DelegationLink link{parent.key.identity, child, parent.key.window, window, {}};
  auto body = link.body();
  link.signature = backend.sign(parent.key.secret, body);
  DelegatedKey out;
  out.key = IdentityKey{child, window, backend.derive(parent.key.secret, body), parent.key.params};
  out.links = parent.links;
  out.links.push_back(std::move(link));
  return out;
}

DelegationChain sign_delegated(const DelegatedKey& key, std::string_view payload, Timestamp now) {
  return DelegationChain{key.links, sign(key.key, payload, now)};
}

Window chain_window(const DelegationChain& chain) {
  Window w = chain.token.window;
  auto narrow = [&](const Window& o) {
    w.not_before = std::max(w.not_before, o.not_before);
    w.not_after = std::min(w.not_after, o.not_after);
  };
  for (const auto& l : chain.links) {
    narrow(l.parent_window);
    narrow(l.window);
  }
  return w;
}

VerifyResult verify_chain(const DomainParams& params, const DelegationChain& chain, std::string_view payload,
                          Timestamp now) {
  if (chain.links.empty()) return verify(params, chain.token, payload, now);
  const auto* backend = find_backend(params.backend);
  if (!backend) return reject(ErrorCode::SignatureInvalid);
  const auto& links = chain.links;
  for (std::size_t i = 1; i < links.size(); ++i) {
    if (links[i].parent != links[i - 1].child || !(links[i].parent_window == links[i - 1].window)) {
      return reject(ErrorCode::ChainBroken);
    }
  }
  if (chain.token.identity != links.back().child || !(chain.token.window == links.back().window)) {
    return reject(ErrorCode::ChainBroken);
  }
  const auto& root = links.front();
  auto at = root.parent.rfind('@');
  if (at == std::string::npos || root.parent.substr(at + 1) != params.domain) {
    return reject(ErrorCode::SignatureInvalid);
  }
  std::vector<std::string> bodies;
  for (const auto& l : links) {
    auto body = l.body();
    if (!backend->verify(params, root.parent, root.parent_window, bodies, body, l.signature)) {
      return reject(ErrorCode::SignatureInvalid);
    }
    bodies.push_back(std::move(body));
  }
  if (sha256_hex(payload) != chain.token.payload_digest) return reject(ErrorCode::SignatureInvalid);
  if (!backend->verify(params, root.parent, root.parent_window, bodies, token_message(chain.token),
                       chain.token.signature)) {
    return reject(ErrorCode::SignatureInvalid);
  }
  if (!chain_window(chain).contains(now)) return reject(ErrorCode::ChainExpired);
  return VerifyResult{true, ErrorCode::BadRequest};
}

Json to_json(const Window& w) { return Json{{"not_before", w.not_before}, {"not_after", w.not_after}}; }

Window window_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("not_before") || !j.contains("not_after") ||
      !j["not_before"].is_number_integer() || !j["not_after"].is_number_integer()) {
    throw Error(ErrorCode::MalformedField, "window");
  }
  return Window{j["not_before"].get<Timestamp>(), j["not_after"].get<Timestamp>()};
}

Json to_json(const DomainParams& p) {
  return Json{{"domain", p.domain}, {"backend", p.backend}, {"public", base64_encode(p.public_data)}};
}

DomainParams params_from_json(const Json& j) {
  return DomainParams{string_field(j, "domain"), string_field(j, "backend"), bytes_field(j, "public")};
}

Json to_json(const IdentityToken& t) {
  return Json{{"identity", t.identity},
              {"window", to_json(t.window)},
              {"payload_digest", t.payload_digest},
              {"signature", base64_encode(t.signature)}};
}

IdentityToken token_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("window")) throw Error(ErrorCode::MalformedField, "token");
  return IdentityToken{string_field(j, "identity"), window_from_json(j["window"]), string_field(j, "payload_digest"),
                       bytes_field(j, "signature")};
}

Json to_json(const DelegationChain& c) {
  Json links = Json::array();
  for (const auto& l : c.links) {
    links.push_back({{"parent", l.parent},
                     {"child", l.child},
                     {"parent_window", to_json(l.parent_window)},
                     {"window", to_json(l.window)},
                     {"signature", base64_encode(l.signature)}});
  }
  return Json{{"links", links}, {"token", to_json(c.token)}};
}

DelegationChain chain_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("links") || !j["links"].is_array() || !j.contains("token")) {
    throw Error(ErrorCode::MalformedField, "delegation chain");
  }
  DelegationChain c;
  for (const auto& l : j["links"]) {
    if (!l.is_object() || !l.contains("parent_window") || !l.contains("window")) {
      throw Error(ErrorCode::MalformedField, "delegation link");
    }
    c.links.push_back(DelegationLink{string_field(l, "parent"), string_field(l, "child"),
                                     window_from_json(l["parent_window"]), window_from_json(l["window"]),
                                     bytes_field(l, "signature")});
  }
  c.token = token_from_json(j["token"]);
  return c;
}

std::string key_store_text(const IdentityKey& key) {
  return canonical_dump(Json{{"identity", key.identity},
                             {"window", to_json(key.window)},
                             {"backend", key.params.backend},
                             {"params", to_json(key.params)},
                             {"secret", base64_encode(key.secret)}});
}

IdentityKey key_from_store_text(std::string_view text) {
  auto j = parse_json(text);
  if (!j.is_object() || !j.contains("window") || !j.contains("params")) throw Error(ErrorCode::MalformedField, "key store");
  IdentityKey k{string_field(j, "identity"), window_from_json(j["window"]), bytes_field(j, "secret"),
                params_from_json(j["params"])};
  if (string_field(j, "backend") != k.params.backend) throw Error(ErrorCode::MalformedField, "backend");
  return k;
}

}  // namespace dget::authz
