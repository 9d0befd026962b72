// ucsim: sequential reference interpreter
//
// Executes a macro program with no speculation: every uop's effects apply
// immediately, branches resolve in order, events fire on the spot. Used as
// the squash-correctness oracle and for hardening-preservation checks.

#pragma once

#include "ucsim/machine.hpp"
#include "ucsim/pipeline.hpp"

namespace ucsim {

struct SeqResult {
  MachineState state;
  std::optional<PendingEvent> event;
  long uops_executed = 0;
  bool step_limit_hit = false;
};

SeqResult run_sequential(const MacroProgram& prog, const MachineState& init,
                         long step_limit = 1000000);

}  // namespace ucsim
