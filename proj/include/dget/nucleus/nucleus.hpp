#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dget/common/clock.hpp"
#include "dget/nucleus/config.hpp"
#include "dget/nucleus/manifest.hpp"
#include "dget/nucleus/shell.hpp"
#include "dget/nucleus/transport.hpp"
#include "dget/overlay/overlay.hpp"
#include "dget/vm/vm.hpp"

namespace dget::nucleus {

inline constexpr std::string_view kSystemEntities[] = {"entity-manager", "security", "resource-discovery",
                                                       "location-discovery"};

struct EntityInfo {
  std::string id;
  std::string name;
  std::string kind;  // EntityKind name, or SYSTEM
  ShellState state = ShellState::Created;
  bool system = false;
  std::string owner;
  std::string home;  // wire address of the hosting nucleus
  authz::ResourceUsage usage;
  authz::ResourceLimits limits;
  std::vector<std::string> output;  // detail only
  vm::Globals globals;              // detail only
  std::string fault;
};

Json to_json(const EntityInfo& e, bool detail);

struct MigrationReceipt {
  std::string entity;
  std::string source;
  std::string target;
  std::string digest;
  std::uint64_t version = 0;
};

Json to_json(const MigrationReceipt& r);

struct Event {
  std::uint64_t seq = 0;
  std::string entity;
  std::string name;
  std::string state;
  std::string previous;
  std::string detail;
};

Json to_json(const Event& e);

struct Counters {
  std::uint64_t frames_handled = 0;
  std::uint64_t dropped_frames = 0;  // failed authentication
  std::uint64_t undeliverable = 0;
  std::uint64_t forwarded = 0;
  std::uint64_t send_failures = 0;
};

class AdminServer;

class Nucleus {
 public:
  explicit Nucleus(NucleusConfig config, const Clock& clock = default_clock());
  ~Nucleus();
  Nucleus(const Nucleus&) = delete;
  Nucleus& operator=(const Nucleus&) = delete;

  /// Binds the wire and admin listeners, registers the system entities,
  /// publishes the node advert and greets the bootstrap peers.
  /// AddressInUse / BadConfig.
  void start();
  void shutdown();

  const std::string& id() const { return config_.id; }
  const NucleusConfig& config() const { return config_; }
  std::string wire_address() const;
  std::string admin_address() const;

  /// Caller identity behind an envelope over `payload`. AuthFailed.
  std::string authenticate(const Json& envelope, std::string_view payload) const;

  /// Program text overrides the manifest's program reference when given.
  std::string deploy(const std::string& caller, const Manifest& manifest,
                     const std::optional<std::string>& program = std::nullopt);
  ShellState stop_entity(const std::string& caller, const std::string& id);
  ShellState suspend_entity(const std::string& caller, const std::string& id);
  ShellState resume_entity(const std::string& caller, const std::string& id);
  MigrationReceipt migrate(const std::string& caller, const std::string& id, const std::string& target);
  /// Typed invocation; returns the operation's RETV value, if any.
  std::optional<vm::Value> invoke(const std::string& caller, const std::string& id, const std::string& op,
                                  const std::vector<vm::Value>& args);

  std::vector<EntityInfo> list_entities() const;
  EntityInfo entity(const std::string& id) const;
  std::vector<overlay::PeerEntry> peers() const;
  std::vector<overlay::Advert> query(const std::string& expr, int ttl);
  std::optional<std::string> locate(const std::string& entity, std::optional<int> ttl = std::nullopt);

  std::optional<WireFrame> handle_frame(const WireFrame& f);

  /// Events with seq > `after`, waiting up to `wait` for the first one.
  std::vector<Event> events_since(std::uint64_t after, std::chrono::milliseconds wait) const;
  Counters counters() const;

  /// Test support: waits until the entity reaches `state` or disappears.
  bool wait_for_state(const std::string& id, ShellState state, std::chrono::milliseconds timeout) const;

  static const Clock& default_clock();

 private:
  struct Record;
  class Host;

  using Lock = std::unique_lock<std::mutex>;

  Record& find(const std::string& id, const Lock&);
  const Record& find(const std::string& id, const Lock&) const;
  Record& find_vm(const std::string& id, const Lock&);
  std::vector<authz::PolicyRule> admin_rules() const;
  void authorize(const std::string& caller, const std::string& action, const Record& r) const;
  void set_state(Record& r, ShellState to, const std::string& detail = {});
  void emit(const Record& r, ShellState previous, const std::string& detail);
  EntityInfo info(const Record& r, bool detail) const;
  bool wait_quiescent(Lock& lock, Record& r);

  void executor_loop();
  void sender_loop();
  void run_round(Lock& lock);
  void drain(Record& r);
  void route(const std::string& from, const vm::Message& m);
  void deliver_local(Record& r, const vm::Value& payload);
  void send(const std::string& address, WireFrame f);
  void send_overlay(std::vector<overlay::Outgoing> out);
  WireFrame make_frame(const std::string& type, Json body) const;
  std::optional<WireFrame> exchange(const std::string& address, WireFrame f);
  void republish();
  std::optional<std::string> address_of(const std::string& entity) const;

  std::optional<WireFrame> on_msg(const WireFrame& f);
  std::optional<WireFrame> on_invoke(const WireFrame& f);
  std::optional<WireFrame> on_offer(const WireFrame& f);
  std::optional<WireFrame> on_state(const WireFrame& f);
  std::optional<vm::Value> invoke_system(const std::string& caller, Record& r, const std::string& op,
                                         const std::vector<vm::Value>& args, Lock& lock);

  NucleusConfig config_;
  const Clock& clock_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::map<std::string, std::unique_ptr<Record>> records_;
  struct Forward {
    std::string address;
    Timestamp until = 0;
  };
  std::map<std::string, Forward> forwards_;
  std::set<std::string> imported_;
  std::uint64_t next_ordinal_ = 1;
  std::unique_ptr<overlay::OverlayNode> overlay_;
  overlay::Descriptor published_;
  std::deque<Event> events_;
  std::uint64_t next_event_ = 1;
  Counters counters_;
  std::uint64_t migration_counter_ = 0;

  std::unique_ptr<TcpServer> wire_;
  std::unique_ptr<AdminServer> admin_;
  bool running_ = false;
  bool stopping_ = false;
  std::thread executor_;
  std::thread sender_;
  std::deque<std::pair<std::string, WireFrame>> outgoing_;
  std::condition_variable outgoing_cv_;
};

}  // namespace dget::nucleus
