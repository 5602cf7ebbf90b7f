#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dget/authz/quota.hpp"
#include "dget/instrument/instrument.hpp"
#include "dget/ir/program.hpp"

namespace dget::vm {

using ir::Value;
using Globals = std::map<std::string, Value>;

enum class Flag { Running, Suspending, Terminated };

enum class ThreadStatus {
  Runnable,
  ExecWait,
  MonitorEntry,
  MonitorWait,
  JoinWait,
  Sleeping,
  RecvWait,
  Done,
  // Restored thread not yet launched.
  PendingLaunch,
};

std::string_view flag_name(Flag f);
std::string_view status_name(ThreadStatus s);
std::optional<ThreadStatus> status_from_name(std::string_view name);
bool is_blocked(ThreadStatus s);

/// APC value of a frame that has not passed any resumption site yet.
inline constexpr std::int64_t kEntryApc = -1;

struct Frame {
  const ir::MethodDef* method = nullptr;
  std::vector<Value> locals;
  std::vector<Value> stack;
  std::size_t pc = 0;
  std::int64_t apc = kEntryApc;
  bool restore_flag = false;
};

/// Serializable part of a frame.
struct FrameRecord {
  std::string method;
  std::vector<Value> locals;
  std::int64_t apc = kEntryApc;
  bool operator==(const FrameRecord&) const = default;
};

/// Captured blocked state of a thread, re-applied when its replay reaches
/// the resumption site.
struct BlockRecord {
  ThreadStatus status = ThreadStatus::ExecWait;
  std::string monitor;          // MonitorEntry / MonitorWait
  std::int64_t reacquire = 0;   // entry count regained when granted
  std::string join_target;      // JoinWait
  std::int64_t sleep_remaining = 0;  // Sleeping, milliseconds
  bool operator==(const BlockRecord&) const = default;
};

struct GreenThread {
  std::string id;
  std::uint64_t ordinal = 0;
  std::vector<Frame> frames;
  ThreadStatus status = ThreadStatus::Runnable;
  std::string monitor;
  std::int64_t reacquire = 0;
  std::string join_target;
  std::int64_t wake_at = 0;
  std::optional<Value> result;  // RETV of the bottom frame

  // Replay after restore.
  bool replaying = false;
  std::deque<FrameRecord> replay_frames;  // frames still to be pushed at CALLs
  std::optional<BlockRecord> replay_block;
};

struct MonitorState {
  std::string owner;  // empty: unowned
  std::int64_t entry_count = 0;
  std::deque<std::string> entry_set;
  std::deque<std::string> wait_set;
  bool operator==(const MonitorState&) const = default;
};

struct Message {
  std::string target;
  Value payload;
  bool operator==(const Message&) const = default;
};

struct Fault {
  std::string tag;
  std::string thread;
  std::string method;
  std::size_t index = 0;
};

/// Entity-context services answered by the hosting nucleus.
class SysHost {
 public:
  virtual ~SysHost() = default;
  virtual void publish(const Value& descriptor) { (void)descriptor; }
  virtual Value query(const Value& expr, std::int64_t ttl) {
    (void)expr;
    (void)ttl;
    return Value{std::int64_t{0}};
  }
  virtual Value locate(const std::string& entity) {
    (void)entity;
    return Value{std::string{}};
  }
};

struct LoadOptions {
  Globals globals;
  std::string entity_id = "local";
  std::uint64_t seed = 0;
  /// Instructions a thread runs before the scheduler moves on. With
  /// randomize_quantum each turn draws from [1, 2*quantum] using `seed`.
  std::uint32_t quantum = 16;
  bool randomize_quantum = false;
  std::size_t inbox_bound = 1024;
};

/// Mutable state of one VM instance; everything the snapshot module reads.
struct VmState {
  std::map<std::uint64_t, GreenThread> threads;  // by ordinal
  std::map<std::string, MonitorState> monitors;
  Globals globals;
  std::deque<Value> inbox;
  std::deque<std::string> recv_waiters;
  std::vector<Message> outbox;
  std::vector<std::string> output;
  authz::ResourceUsage usage;
  authz::ResourceLimits limits;
  Flag flag = Flag::Running;
  std::int64_t clock = 0;
  std::uint64_t next_ordinal = 0;
  std::uint64_t dropped_messages = 0;
};

enum class StepKind { Quiescent, Ran, AllDone, Terminated };

struct StepOutcome {
  StepKind kind = StepKind::Ran;
  std::uint64_t executed = 0;
};

std::string_view step_kind_name(StepKind k);

class Vm {
 public:
  /// New instance: one RUNNABLE thread "t0" on the entry method, declared
  /// monitors unowned. The program must pass verify(INSTRUMENTED) and the
  /// handler scan (VerificationFailed / LoadRejected otherwise).
  Vm(instrument::InstrumentedProgram program, authz::ResourceLimits limits, LoadOptions options = {});

  /// Instance rebuilt from captured state. Threads are PENDING_LAUNCH until
  /// launch(); used by the snapshot module.
  static std::unique_ptr<Vm> from_state(instrument::InstrumentedProgram program, VmState state, LoadOptions options);

  Vm(const Vm&) = delete;
  Vm& operator=(const Vm&) = delete;

  /// Runs at most `budget` instructions round-robin. Throws RuntimeFault on
  /// an uncaught exception; the instance stays failed afterwards.
  StepOutcome step(std::uint64_t budget);

  void request_suspend();
  void resume();
  void request_terminate();
  bool quiescent() const;

  /// Hands the payload to the oldest RECV_WAIT thread, or queues it. Throws
  /// InboxOverflow when the queue is at its bound (message dropped).
  void deliver_message(Value payload);
  std::vector<Message> take_outbox();

  /// Starts `method` on a new thread with the given arguments (typed
  /// invocation). Returns the thread id.
  std::string spawn_invocation(const std::string& method, const std::vector<Value>& args);
  const GreenThread* thread(const std::string& id) const;

  /// Restore support: moves a PENDING_LAUNCH thread into replay.
  void launch(const std::string& thread_id);
  /// True once the thread finished replaying and is not RUNNABLE.
  bool settled(const std::string& thread_id) const;

  void set_host(SysHost* host) { host_ = host; }

  Flag flag() const { return st_.flag; }
  const VmState& state() const { return st_; }
  const instrument::InstrumentedProgram& program() const { return *program_; }
  const LoadOptions& options() const { return options_; }
  const std::optional<Fault>& fault() const { return fault_; }
  bool all_done() const;
  std::size_t live_threads() const;
  /// Instructions executed since construction or restore (replay excluded).
  std::uint64_t executed() const { return executed_; }

 private:
  Vm(std::shared_ptr<const instrument::InstrumentedProgram> program, LoadOptions options);

  GreenThread* find_thread(const std::string& id);
  GreenThread& new_thread(const ir::MethodDef& method, std::vector<Value> args);
  bool charge(std::string_view counter, std::int64_t amount);
  void wake_sleepers();
  GreenThread* pick_next();
  void run_thread(GreenThread& t, std::uint64_t& budget, std::uint64_t& executed);
  void exec(GreenThread& t);
  void raise(GreenThread& t, const std::string& tag);
  void finish_thread(GreenThread& t);
  void terminate_thread(GreenThread& t);
  void release_monitor(MonitorState& m, const std::string& id);
  void grant(GreenThread& t, MonitorState& m);
  void apply_replay_block(GreenThread& t, const ir::Instruction& in);
  void handoff_messages();
  [[noreturn]] void fail(GreenThread& t, const std::string& tag);

  std::shared_ptr<const instrument::InstrumentedProgram> program_;
  LoadOptions options_;
  VmState st_;
  SysHost default_host_;
  SysHost* host_ = &default_host_;
  std::mt19937_64 rng_;
  std::uint64_t cursor_ = 0;
  std::uint64_t executed_ = 0;
  std::optional<Fault> fault_;
};

}  // namespace dget::vm
