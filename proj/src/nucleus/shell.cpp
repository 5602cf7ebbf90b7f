#include "dget/nucleus/shell.hpp"

#include "dget/common/error.hpp"

namespace dget::nucleus {

std::string_view state_name(ShellState s) {
  switch (s) {
    case ShellState::Created: return "CREATED";
    case ShellState::Running: return "RUNNING";
    case ShellState::Suspended: return "SUSPENDED";
    case ShellState::Migrating: return "MIGRATING";
    case ShellState::Terminated: return "TERMINATED";
    case ShellState::Failed: return "FAILED";
  }
  return "FAILED";
}

std::optional<ShellState> state_from_name(std::string_view name) {
  for (auto s : {ShellState::Created, ShellState::Running, ShellState::Suspended, ShellState::Migrating,
                 ShellState::Terminated, ShellState::Failed}) {
    if (state_name(s) == name) return s;
  }
  return std::nullopt;
}

bool transition_allowed(ShellState from, ShellState to) {
  using S = ShellState;
  switch (from) {
    case S::Created: return to == S::Running;
    case S::Running: return to == S::Suspended || to == S::Migrating || to == S::Terminated || to == S::Failed;
    case S::Suspended: return to == S::Running || to == S::Migrating || to == S::Terminated;
    case S::Migrating: return to == S::Terminated || to == S::Running || to == S::Suspended;
    case S::Terminated:
    case S::Failed: return false;
  }
  return false;
}

ShellState Shell::transition(ShellState to) {
  bool ok = transition_allowed(state_, to);
  if (ok && state_ == ShellState::Migrating && to != ShellState::Terminated) ok = migrating_from_ == to;
  if (!ok) {
    throw Error(ErrorCode::IllegalTransition,
                std::string(state_name(state_)) + " -> " + std::string(state_name(to)));
  }
  auto prev = state_;
  migrating_from_ = to == ShellState::Migrating ? std::optional<ShellState>(prev) : std::nullopt;
  state_ = to;
  return prev;
}

}  // namespace dget::nucleus
