#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dget/authz/identity.hpp"
#include "dget/nucleus/nucleus.hpp"
#include "support/corpus.hpp"

namespace dget::testing {

inline constexpr const char* kDomain = "grid";
inline constexpr const char* kPkgSeed = "grid-test-pkg";
inline constexpr Timestamp kFarFuture = 4102444800;

/// Seeded test PKG for the "grid" domain; identical in every process.
const authz::PkgState& test_pkg();
authz::DelegatedKey key_for(const std::string& identity, authz::Window window = {0, kFarFuture});

using ConfigTweak = std::function<void(nucleus::NucleusConfig&)>;

/// Loopback config on ephemeral ports with fast discovery timings.
nucleus::NucleusConfig test_config(const std::string& id, const std::vector<std::string>& bootstrap = {});

/// Nuclei started in a line: node k bootstraps from node k-1.
class Grid {
 public:
  explicit Grid(std::size_t n, const ConfigTweak& tweak = {});
  ~Grid();
  nucleus::Nucleus& operator[](std::size_t k) { return *nodes_.at(k); }
  std::size_t size() const { return nodes_.size(); }
  /// Waits until every node lists its line neighbours as peers.
  bool wait_connected(std::chrono::milliseconds timeout);

 private:
  std::vector<std::unique_ptr<nucleus::Nucleus>> nodes_;
};

nucleus::Manifest manifest_for(const std::string& name, const std::string& text,
                               nucleus::EntityKind kind = nucleus::EntityKind::DataDriven,
                               const std::string& entry = "main");
/// Data-driven manifest running a corpus program with `inputs`.
nucleus::Manifest corpus_manifest(const CorpusEntry& entry, const Globals& inputs);

bool wait_until(const std::function<bool()>& pred, std::chrono::milliseconds timeout);

/// Writes a key store and a config file for a `dgetctl nucleus run` child.
std::string write_process_config(const std::string& dir, const std::string& id,
                                 const std::vector<std::string>& bootstrap, const Json& extra = Json::object());
/// Writes a key store for `identity` and returns its path.
std::string write_key(const std::string& dir, const std::string& identity, authz::Window window = {0, kFarFuture});

}  // namespace dget::testing
