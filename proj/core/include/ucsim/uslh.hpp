// ucsim: conditional-select hardening pass and vulnerability scanner
//
// The pass inserts, after each conditional microcode branch, conditional
// select uops predicated on the inverted branch condition so registers that
// may hold unauthorized or invalid data read as zero along mispredicted
// paths. The scanner classifies every conditional branch as exception-bypass
// (MEB), value-injection (MVI) or in-microprogram leak (MIL).

#pragma once

#include <map>
#include <string>
#include <vector>

#include "ucsim/corpus.hpp"
#include "ucsim/scenario.hpp"
#include "ucsim/uisa.hpp"

namespace ucsim {

struct HardenPolicy {
  bool taint_guided = true;  // otherwise only explicit_selects apply
  // branch micro-address -> registers to guard for that branch
  std::map<uint32_t, std::vector<RegisterId>> explicit_selects;
  bool skip_loops = true;
};

struct HardenError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScanFinding {
  uint32_t branch_addr = 0;
  AttackClass cls = AttackClass::Benign;
  std::string evidence;
};

std::vector<ScanFinding> scan(const Microprogram& p, const Scenario& sc,
                              const MacroBinding& bind = {});

Microprogram harden(const Microprogram& p, const HardenPolicy& policy,
                    const Scenario& sc, const MacroBinding& bind = {});

struct LoopDelta {
  std::string label;
  int uops_before = 0;
  int uops_after = 0;
};

struct OverheadReport {
  int uops_before = 0;
  int uops_after = 0;
  std::vector<LoopDelta> loops;
};

OverheadReport overhead(const Microprogram& p, const Microprogram& hp);

}  // namespace ucsim
