#include "support/migration.hpp"

#include "dget/common/error.hpp"

namespace dget::testing {

bool suspend_to_quiescence(vm::Vm& vm, std::uint64_t budget) {
  vm.request_suspend();
  std::uint64_t spent = 0;
  while (!vm.quiescent()) {
    auto out = vm.step(64);
    spent += out.executed;
    if (vm.all_done()) return false;
    if (spent > budget || (out.executed == 0 && !vm.quiescent())) {
      throw Error(ErrorCode::QuiescenceTimeout, "entity did not reach quiescence");
    }
  }
  return true;
}

std::unique_ptr<vm::Vm> migrate(vm::Vm& vm, const snapshot::RestoreOptions& options,
                                const std::function<std::string(const std::string&)>& transfer) {
  auto s = snapshot::capture(vm);
  auto bytes = snapshot::encode(s);
  if (transfer) bytes = transfer(bytes);
  return snapshot::restore(snapshot::decode(bytes), options);
}

MigratingRun run_migrating(const instrument::InstrumentedProgram& program, const Globals& inputs,
                           std::mt19937_64& rng, int max_migrations, const VmRunOptions& options,
                           std::uint64_t horizon) {
  MigratingRun run;
  auto& r = run.result;
  vm::LoadOptions lo;
  lo.globals = inputs;
  lo.entity_id = options.entity_id;
  lo.seed = options.seed;
  lo.quantum = options.quantum;
  lo.randomize_quantum = options.randomize_quantum;
  auto vm = std::make_unique<vm::Vm>(program, options.limits, lo);
  std::uint64_t total = 0;
  int planned = std::uniform_int_distribution<int>(1, std::max(1, max_migrations))(rng);
  auto span = std::max<std::uint64_t>(1, horizon / static_cast<std::uint64_t>(std::max(1, max_migrations)));
  auto next_gap = [&] { return std::uniform_int_distribution<std::uint64_t>(0, span - 1)(rng); };
  std::uint64_t next_at = next_gap();

  auto collect = [&](vm::Vm& v) {
    const auto& out = v.state().output;
    r.output.insert(r.output.end(), out.begin(), out.end());
    total += v.executed();
  };

  try {
    while (true) {
      if (total + vm->executed() >= options.max_steps) {
        r.status = "step_limit";
        break;
      }
      std::uint64_t slice = options.slice;
      if (run.migrations < planned && vm->executed() < next_at) slice = std::min(slice, next_at - vm->executed());
      auto out = vm->step(std::max<std::uint64_t>(slice, 1));
      bool delivered = route_self(*vm, &r.sent);
      if (out.kind == vm::StepKind::AllDone) {
        r.status = "completed";
        break;
      }
      if (out.kind == vm::StepKind::Quiescent && !delivered) {
        r.status = "deadlock";
        break;
      }
      if (run.migrations < planned && vm->executed() >= next_at) {
        if (!suspend_to_quiescence(*vm)) {
          route_self(*vm, &r.sent);
          r.status = "completed";
          break;
        }
        route_self(*vm, &r.sent);
        snapshot::RestoreOptions ro;
        ro.load = lo;
        ro.load.seed = rng();
        auto next = migrate(*vm, ro);
        collect(*vm);
        vm = std::move(next);
        run.migrations++;
        next_at = next_gap();
      }
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::RuntimeFault || !vm->fault()) throw;
    r.status = "fault:" + vm->fault()->tag;
  }
  collect(*vm);
  r.globals = vm->state().globals;
  r.usage = vm->state().usage;
  r.steps = total;
  return run;
}

}  // namespace dget::testing
