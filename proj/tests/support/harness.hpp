#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dget/vm/vm.hpp"
#include "support/reference.hpp"

namespace dget::testing {

struct VmRunOptions {
  std::string entity_id = "ref-e1";
  std::uint64_t seed = 0;
  std::uint32_t quantum = 16;
  bool randomize_quantum = false;
  authz::ResourceLimits limits;
  std::uint64_t max_steps = 5'000'000;
  std::uint64_t slice = 997;
};

struct VmRunResult {
  std::string status;  // completed | fault:<tag> | deadlock | step_limit | terminated
  std::vector<std::string> output;
  Globals globals;
  std::uint64_t steps = 0;
  authz::ResourceUsage usage;
  std::vector<std::pair<std::string, std::string>> sent;
};

/// Delivers messages addressed to the VM's own entity id back to its inbox;
/// everything else is recorded in `sent` (as display strings).
bool route_self(vm::Vm& vm, std::vector<std::pair<std::string, std::string>>* sent);

/// Drives a VM until every thread is done, it faults, deadlocks or the
/// step limit is hit.
VmRunResult drive(vm::Vm& vm, const VmRunOptions& options);

VmRunResult run_vm(const instrument::InstrumentedProgram& program, const Globals& inputs,
                   const VmRunOptions& options = {});

inline bool same_observables(const VmRunResult& a, const RefResult& b) {
  return a.status == b.status && a.output == b.output && a.globals == b.globals;
}

}  // namespace dget::testing
