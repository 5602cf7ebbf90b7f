#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace dget::nucleus {

enum class ShellState { Created, Running, Suspended, Migrating, Terminated, Failed };

std::string_view state_name(ShellState s);
std::optional<ShellState> state_from_name(std::string_view name);

/// CREATED->RUNNING; RUNNING<->SUSPENDED; RUNNING/SUSPENDED->MIGRATING;
/// MIGRATING->TERMINATED on acknowledgement, or back to the state it left
/// when the migration fails; RUNNING/SUSPENDED->TERMINATED; RUNNING->FAILED.
bool transition_allowed(ShellState from, ShellState to);

class Shell {
 public:
  ShellState state() const { return state_; }
  /// IllegalTransition outside the declared set. Returns the previous state.
  ShellState transition(ShellState to);

  /// Only a migration rollback may return to this state from MIGRATING.
  std::optional<ShellState> migrating_from() const { return migrating_from_; }

 private:
  ShellState state_ = ShellState::Created;
  std::optional<ShellState> migrating_from_;
};

}  // namespace dget::nucleus
