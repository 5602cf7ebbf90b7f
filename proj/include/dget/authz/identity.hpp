#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dget/common/canonical.hpp"
#include "dget/common/clock.hpp"
#include "dget/common/error.hpp"

namespace dget::authz {

/// Inclusive at both ends.
struct Window {
  Timestamp not_before = 0;
  Timestamp not_after = 0;

  bool contains(Timestamp t) const { return not_before <= t && t <= not_after; }
  bool within(const Window& outer) const {
    return outer.not_before <= not_before && not_after <= outer.not_after;
  }
  bool operator==(const Window&) const = default;
};

/// Public parameters of one PKG domain. `public_data` is backend-opaque.
struct DomainParams {
  std::string domain;
  std::string backend;
  Bytes public_data;
  bool operator==(const DomainParams&) const = default;
};

/// Identity-based signature scheme. The identity string itself is the
/// public key: verification needs only the domain parameters.
class SignatureBackend {
 public:
  virtual ~SignatureBackend() = default;
  virtual std::string name() const = 0;
  struct Setup {
    Bytes master;
    DomainParams params;
  };
  virtual Setup setup(const std::string& domain, std::span<const std::uint8_t> seed) const = 0;
  virtual Bytes extract(std::span<const std::uint8_t> master, std::string_view identity, const Window& w) const = 0;
  /// Proxy secret for a delegation link, computable from the parent secret.
  virtual Bytes derive(std::span<const std::uint8_t> parent_secret, std::string_view link_body) const = 0;
  virtual Bytes sign(std::span<const std::uint8_t> secret, std::string_view message) const = 0;
  /// Checks `signature` on `message` by the identity (root secret) or by the
  /// proxy reachable through `delegation` link bodies.
  virtual bool verify(const DomainParams& params, std::string_view identity, const Window& w,
                      const std::vector<std::string>& delegation, std::string_view message,
                      std::span<const std::uint8_t> signature) const = 0;
};

/// Deterministic keyed-digest backend (HMAC-SHA256). NOT secure: the domain
/// parameters carry the verification key. Exists so the protocol and expiry
/// rules can be exercised without pairing-based cryptography.
class HmacTestBackend final : public SignatureBackend {
 public:
  std::string name() const override { return "hmac-test"; }
  Setup setup(const std::string& domain, std::span<const std::uint8_t> seed) const override;
  Bytes extract(std::span<const std::uint8_t> master, std::string_view identity, const Window& w) const override;
  Bytes derive(std::span<const std::uint8_t> parent_secret, std::string_view link_body) const override;
  Bytes sign(std::span<const std::uint8_t> secret, std::string_view message) const override;
  bool verify(const DomainParams& params, std::string_view identity, const Window& w,
              const std::vector<std::string>& delegation, std::string_view message,
              std::span<const std::uint8_t> signature) const override;
};

/// Built-in backends by name; nullptr when unknown.
const SignatureBackend* find_backend(std::string_view name);

struct PkgState {
  std::string domain;
  const SignatureBackend* backend = nullptr;
  Bytes master;
  DomainParams params;
};

struct IdentityKey {
  std::string identity;
  Window window;
  Bytes secret;
  DomainParams params;
  bool operator==(const IdentityKey&) const = default;
};

struct IdentityToken {
  std::string identity;
  Window window;
  std::string payload_digest;  // sha256 hex
  Bytes signature;
  bool operator==(const IdentityToken&) const = default;
};

struct DelegationLink {
  std::string parent;
  std::string child;
  Window parent_window;
  Window window;
  Bytes signature;  // by the parent key over body()
  bool operator==(const DelegationLink&) const = default;
  std::string body() const;
};

/// Links root -> leaf plus the leaf's signature over the payload.
struct DelegationChain {
  std::vector<DelegationLink> links;
  IdentityToken token;
  bool operator==(const DelegationChain&) const = default;
};

/// Key able to act for `key.identity` through `links` (empty: a PKG-issued
/// identity key).
struct DelegatedKey {
  IdentityKey key;
  std::vector<DelegationLink> links;
};

/// `seed` makes the master secret reproducible; empty draws from the OS.
PkgState pkg_init(const std::string& domain, const SignatureBackend& backend = HmacTestBackend{},
                  std::span<const std::uint8_t> seed = {});

/// Deterministic in (master, identity, window). Throws WrongDomain,
/// InvalidWindow.
IdentityKey issue_identity(const PkgState& pkg, const std::string& identity, const Window& window);

/// Throws Expired / NotYetValid when `now` is outside the key window.
IdentityToken sign(const IdentityKey& key, std::string_view payload, Timestamp now);

struct VerifyResult {
  bool accepted = false;
  ErrorCode reason = ErrorCode::SignatureInvalid;
  explicit operator bool() const { return accepted; }
};

/// Pure in (params, token, payload, now); consults nothing else.
VerifyResult verify(const DomainParams& params, const IdentityToken& token, std::string_view payload, Timestamp now);

/// Narrowing only: throws WindowNotNested when `window` leaves the parent
/// window, Expired/NotYetValid when `now` is outside it.
DelegatedKey delegate(const DelegatedKey& parent, const std::string& child, const Window& window, Timestamp now);
inline DelegatedKey delegate(const IdentityKey& parent, const std::string& child, const Window& window, Timestamp now) {
  return delegate(DelegatedKey{parent, {}}, child, window, now);
}

DelegationChain sign_delegated(const DelegatedKey& key, std::string_view payload, Timestamp now);

/// ChainBroken when links do not connect, ChainExpired when `now` is outside
/// the intersection of all windows, SignatureInvalid otherwise.
VerifyResult verify_chain(const DomainParams& params, const DelegationChain& chain, std::string_view payload,
                          Timestamp now);

/// Intersection of every window on the chain (may be empty: not_before >
/// not_after).
Window chain_window(const DelegationChain& chain);

Json to_json(const Window& w);
Window window_from_json(const Json& j);
Json to_json(const DomainParams& p);
DomainParams params_from_json(const Json& j);
Json to_json(const IdentityToken& t);
IdentityToken token_from_json(const Json& j);
Json to_json(const DelegationChain& c);
DelegationChain chain_from_json(const Json& j);

/// Key store text: {identity, window, backend, domain, params, secret}.
std::string key_store_text(const IdentityKey& key);
IdentityKey key_from_store_text(std::string_view text);

}  // namespace dget::authz
