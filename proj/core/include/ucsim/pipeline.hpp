// ucsim: microsequencer + out-of-order execution model
//
// Triad fetch, static branch prediction by position, in-order issue into a
// reorder buffer, dataflow execution, out-of-order misprediction detection
// (which stops issue), and in-order resolution at retirement (squash +
// refetch). Control-register and micro-RAM writes apply at execute and
// persist through squash.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ucsim/channel.hpp"
#include "ucsim/machine.hpp"
#include "ucsim/scenario.hpp"
#include "ucsim/uisa.hpp"

namespace ucsim {

// ------------------------------------------------------------------- config

struct SimConfig {
  int rob_size = 64;
  int detect_delay = 0;       // cycles after predicate-ready before issue stops
  int correction_delay = 20;  // resolve -> retire gap for mispredictions/faults
  int lat_alu = 1;
  int lat_creg = 4;  // control-register reads are load-like
  int lat_uram = 4;
  int lat_seg = 4;
  int lat_div = 8;
  int mite_uops_per_cycle = 3;
  int decode_macros_per_cycle = 4;
  int retire_per_cycle = 3;
  long cycle_limit = 200000;

  void apply(const std::map<std::string, long>& kv);
};

// ---------------------------------------------------------------- macro-ops

struct MiteBody {
  std::vector<MicroOp> uops;  // three or fewer
};

struct MacroOp {
  std::string mnemonic;
  MacroBinding bind;
  std::variant<MiteBody, const Microprogram*> body;

  bool is_ms() const {
    return std::holds_alternative<const Microprogram*>(body);
  }
  const Microprogram* prog() const {
    return std::get<const Microprogram*>(body);
  }
};

using MacroProgram = std::vector<MacroOp>;

// Single-uop MITE macro-op builders for attack drivers and tests.
namespace mite {
MacroOp mov_ri(RegisterId dst, uint64_t imm);
MacroOp mov_rr(RegisterId dst, RegisterId src);
MacroOp ld(RegisterId dst, RegisterId base, uint64_t disp, unsigned bytes);
MacroOp ld_abs(RegisterId dst, uint64_t addr, unsigned bytes);
MacroOp st(RegisterId src, RegisterId base, uint64_t disp, unsigned bytes);
MacroOp add_ri(RegisterId dst, uint64_t imm);
MacroOp add_rr(RegisterId dst, RegisterId src);
MacroOp and_ri(RegisterId dst, uint64_t imm);
MacroOp or_rr(RegisterId dst, RegisterId src);
MacroOp shl_ri(RegisterId dst, uint64_t imm);
MacroOp shr_ri(RegisterId dst, uint64_t imm);
MacroOp lfence();
MacroOp clflush(uint64_t addr);
MacroOp nop();
}  // namespace mite

// --------------------------------------------------------------- prediction

enum class BranchKind : uint8_t {
  CondDirect,
  CondIndirect,
  UncondDirect,
  UncondIndirect
};

enum class Prediction : uint8_t { NotTaken, Taken, Stall };

struct PredictionPolicy {
  // [kind][last-in-triad]
  Prediction table[4][2];
  static PredictionPolicy goldmont();
};

BranchKind branch_kind(const MicroOp& u);
Prediction predict(const MicroOp& u, TriadPos pos,
                   const PredictionPolicy& policy);

// -------------------------------------------------------------------- trace

struct TraceEvent {
  enum class Kind : uint8_t {
    Fetch,
    Issue,
    Execute,
    Retire,
    Squash,
    Detect,
    Redirect,
    ArchEvent
  };
  long cycle = 0;
  Kind kind{};
  int rob = -1;
  int macro = -1;
  std::string text;
};

struct ChannelTouch {
  long cycle = 0;
  uint64_t addr = 0;
  bool is_store = false;
  TaintSet addr_taint;
  TaintSet data_taint;
  int rob = -1;
  int macro = -1;
  bool transient = false;  // finalized after the run
  std::string uop;
};

struct BranchObs {
  long cycle = 0;  // resolve cycle
  int rob = -1;
  int macro = -1;
  bool taken = false;
  bool mispredicted = false;
  bool transient = false;  // the branch uop itself was squashed
  TaintSet pred_taint;
  std::string uop;
};

struct PerfCounters {
  uint64_t uops_issued = 0;
  uint64_t uops_retired = 0;
  uint64_t ms_uops = 0;
  uint64_t macro_ops_retired = 0;
  uint64_t transient_macro_ops = 0;
  uint64_t transient_uops() const { return uops_issued - uops_retired; }
};

struct PipelineTrace {
  std::vector<TraceEvent> events;
  std::vector<ChannelTouch> touches;
  std::vector<BranchObs> branches;
  PerfCounters counters;
  std::optional<PendingEvent> arch_event;
  long cycles = 0;
  bool cycle_limit_hit = false;
  long max_rob_occupancy = 0;

  // squashed uop descriptions in issue order, by macro index
  std::vector<std::pair<int, std::string>> squashed_uops;
  std::string render() const;  // stable line-oriented event log
};

struct SimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --------------------------------------------------------------- simulation

struct RobEntry {
  MicroOp uop;  // slot operands resolved against the macro binding
  int macro = -1;
  bool ms = false;
  bool last_of_macro = false;
  enum class St : uint8_t { Issued, Executed, Squashed, Retired } st =
      St::Issued;
  long issue_cycle = 0;
  long ready_cycle = -1;  // result available (valid once executed)
  // register sources captured at issue: (register, producer rob id)
  std::vector<std::pair<RegisterId, int>> reg_src;
  std::vector<WriteEffect> effects;
  std::optional<BranchRes> br;
  bool predicted_taken = false;
  bool mispredicted = false;
  std::optional<uint64_t> event_code;
  std::optional<MemRef> mem;
  TaintedValue result;      // primary register result
  bool has_result = false;
  bool writes_reg = false;
  RegisterId result_reg{};
  long detect_at = -1;
  long retire_eligible = -1;
  // execution gates from sequence-word barriers
  int gate_all_before = -1;    // all rob entries < n must have executed
  int gate_loads_before = -1;  // all load-like entries < n must have executed
  uint32_t uaddr = 0;          // micro-address (MS uops)
  std::string pretty;
};

class Simulation {
 public:
  Simulation(const MacroProgram& prog, const Scenario& sc,
             const SimConfig& cfg, CacheModel* cache);

  void step();
  bool halted() const;
  PipelineTrace take_trace();
  const MachineState& state() const { return mach_; }
  long cycle() const { return cycle_; }
  const std::vector<RobEntry>& rob() const { return rob_; }

  // Runs to completion (or cycle limit) and finalizes the trace.
  static PipelineTrace run(const MacroProgram& prog, const Scenario& sc,
                           const SimConfig& cfg, CacheModel& cache,
                           MachineState* final_state = nullptr);

 private:
  struct Frontend {
    int next_macro = 0;
    bool ms_active = false;
    const Microprogram* ms_prog = nullptr;
    const MacroOp* ms_macro_op = nullptr;
    uint32_t upc = 0;
    int ms_macro = -1;
    int slot = 0;  // resume point within the current triad
    bool stalled_indirect = false;
    int stall_rob = -1;
    int lfence_rob = -1;  // issue blocked until this entry executes
    // barrier marks, as rob high-water marks
    int lfnce_mark = 0;
    int sync_mark = 0;
    int gate_all_before = -1;
    int gate_loads_before = -1;
  };

  void do_detect();
  void do_retire();
  void do_issue();
  void do_execute();
  bool issue_one(const MicroOp& u, const MacroOp& mop, int macro_idx, bool ms,
                 uint32_t uaddr);
  void start_macro(int idx);
  void apply_seqw(const SeqDirective& s);
  void squash_younger(size_t from_rob, const char* why);
  void redirect(int macro_idx, const MacroOp* mop, bool ms, uint32_t upc);
  int rob_occupancy() const;
  bool deps_ready(const RobEntry& e) const;
  bool gates_open(const RobEntry& e) const;
  bool exec_order_ok(size_t idx) const;
  void finalize_trace();
  void trace_ev(TraceEvent::Kind k, int rob, int macro, std::string text);

  const MacroProgram& prog_;
  const Scenario& sc_;
  SimConfig cfg_;
  CacheModel* cache_;
  MachineState mach_;
  PredictionPolicy policy_ = PredictionPolicy::goldmont();

  Frontend fe_;
  std::vector<RobEntry> rob_;
  size_t retire_ptr_ = 0;
  std::array<int, kIntRegs> rename_{};  // latest producer rob id or -1
  bool issue_stopped_ = false;
  long cycle_ = 0;
  bool halted_ = false;
  PipelineTrace trace_;
  std::map<uint64_t, std::string> event_names_;
};

// Convenience: build scenario-initialized cache (pre-flushes applied).
CacheModel make_cache(const Scenario& sc, const SimConfig& cfg);

}  // namespace ucsim
