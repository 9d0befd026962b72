#include "ucsim/pipeline.hpp"

#include <algorithm>
#include <cassert>
#include <set>
#include <sstream>

namespace ucsim {

void SimConfig::apply(const std::map<std::string, long>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "rob_size") rob_size = static_cast<int>(v);
    else if (k == "detect_delay") detect_delay = static_cast<int>(v);
    else if (k == "correction_delay") correction_delay = static_cast<int>(v);
    else if (k == "lat_alu") lat_alu = static_cast<int>(v);
    else if (k == "lat_creg") lat_creg = static_cast<int>(v);
    else if (k == "lat_uram") lat_uram = static_cast<int>(v);
    else if (k == "lat_seg") lat_seg = static_cast<int>(v);
    else if (k == "lat_div") lat_div = static_cast<int>(v);
    else if (k == "mite_uops_per_cycle") mite_uops_per_cycle = static_cast<int>(v);
    else if (k == "decode_macros_per_cycle") decode_macros_per_cycle = static_cast<int>(v);
    else if (k == "retire_per_cycle") retire_per_cycle = static_cast<int>(v);
    else if (k == "cycle_limit") cycle_limit = v;
    else throw SimError("unknown config key '" + k + "'");
  }
}

// ---------------------------------------------------------------- macro-ops

namespace mite {

namespace {
MacroOp one(std::string mnemonic, MicroOp u) {
  MacroOp m;
  m.mnemonic = std::move(mnemonic);
  MiteBody b;
  b.uops.push_back(std::move(u));
  m.body = std::move(b);
  return m;
}
}  // namespace

MacroOp mov_ri(RegisterId dst, uint64_t imm) {
  MicroOp u;
  u.op = Opcode::Move64;
  u.dst = Operand::make_reg(dst);
  u.srcs = {Operand::make_imm(imm)};
  return one("mov", std::move(u));
}

MacroOp mov_rr(RegisterId dst, RegisterId src) {
  MicroOp u;
  u.op = Opcode::Move64;
  u.dst = Operand::make_reg(dst);
  u.srcs = {Operand::make_reg(src)};
  return one("mov", std::move(u));
}

MacroOp ld(RegisterId dst, RegisterId base, uint64_t disp, unsigned bytes) {
  MicroOp u;
  u.op = Opcode::LdZx;
  u.dst = Operand::make_reg(dst);
  u.srcs = {Operand::make_reg(base), Operand::make_imm(disp)};
  MacroOp m = one("mov", std::move(u));
  m.bind.bind_imm("n", bytes);
  return m;
}

MacroOp ld_abs(RegisterId dst, uint64_t addr, unsigned bytes) {
  MicroOp u;
  u.op = Opcode::LdZx;
  u.dst = Operand::make_reg(dst);
  u.srcs = {Operand::make_imm(addr)};
  MacroOp m = one("mov", std::move(u));
  m.bind.bind_imm("n", bytes);
  return m;
}

MacroOp st(RegisterId src, RegisterId base, uint64_t disp, unsigned bytes) {
  MicroOp u;
  u.op = bytes == 1 ? Opcode::St8 : bytes == 4 ? Opcode::St32 : Opcode::St64;
  u.srcs = {Operand::make_reg(src), Operand::make_reg(base),
            Operand::make_imm(disp)};
  return one("mov-store", std::move(u));
}

MacroOp add_ri(RegisterId dst, uint64_t imm) {
  MicroOp u;
  u.op = Opcode::Add64;
  u.dst = Operand::make_reg(dst);
  u.srcs = {Operand::make_reg(dst), Operand::make_imm(imm)};
  return one("add", std::move(u));
}

MacroOp add_rr(RegisterId dst, RegisterId src) {
  MicroOp u;
  u.op = Opcode::Add64;
  u.dst = Operand::make_reg(dst);
  u.srcs = {Operand::make_reg(dst), Operand::make_reg(src)};
  return one("add", std::move(u));
}

MacroOp and_ri(RegisterId dst, uint64_t imm) {
  MicroOp u;
  u.op = Opcode::And64;
  u.dst = Operand::make_reg(dst);
  u.srcs = {Operand::make_reg(dst), Operand::make_imm(imm)};
  return one("and", std::move(u));
}

MacroOp or_rr(RegisterId dst, RegisterId src) {
  MicroOp u;
  u.op = Opcode::Or64;
  u.dst = Operand::make_reg(dst);
  u.srcs = {Operand::make_reg(dst), Operand::make_reg(src)};
  return one("or", std::move(u));
}

MacroOp shl_ri(RegisterId dst, uint64_t imm) {
  MicroOp u;
  u.op = Opcode::Shl64;
  u.dst = Operand::make_reg(dst);
  u.srcs = {Operand::make_reg(dst), Operand::make_imm(imm)};
  return one("shl", std::move(u));
}

MacroOp shr_ri(RegisterId dst, uint64_t imm) {
  MicroOp u;
  u.op = Opcode::Shr64;
  u.dst = Operand::make_reg(dst);
  u.srcs = {Operand::make_reg(dst), Operand::make_imm(imm)};
  return one("shr", std::move(u));
}

MacroOp lfence() {
  MicroOp u;
  u.op = Opcode::Lfence;
  return one("lfence", std::move(u));
}

MacroOp clflush(uint64_t addr) {
  MicroOp u;
  u.op = Opcode::Cflush;
  u.srcs = {Operand::make_imm(addr)};
  return one("clflush", std::move(u));
}

MacroOp nop() { return one("nop", MicroOp::nop(false)); }

}  // namespace mite

// --------------------------------------------------------------- prediction

PredictionPolicy PredictionPolicy::goldmont() {
  PredictionPolicy p;
  auto set = [&](BranchKind k, Prediction notlast, Prediction last) {
    p.table[static_cast<int>(k)][0] = notlast;
    p.table[static_cast<int>(k)][1] = last;
  };
  set(BranchKind::CondDirect, Prediction::NotTaken, Prediction::NotTaken);
  set(BranchKind::CondIndirect, Prediction::NotTaken, Prediction::NotTaken);
  set(BranchKind::UncondDirect, Prediction::NotTaken, Prediction::Taken);
  set(BranchKind::UncondIndirect, Prediction::NotTaken, Prediction::Stall);
  return p;
}

BranchKind branch_kind(const MicroOp& u) {
  bool cond = u.is_cond_branch();
  bool indirect = u.is_indirect_branch();
  if (cond) return indirect ? BranchKind::CondIndirect : BranchKind::CondDirect;
  return indirect ? BranchKind::UncondIndirect : BranchKind::UncondDirect;
}

Prediction predict(const MicroOp& u, TriadPos pos,
                   const PredictionPolicy& policy) {
  assert(u.is_branch());
  int last = pos == TriadPos::Last ? 1 : 0;
  return policy.table[static_cast<int>(branch_kind(u))][last];
}

// -------------------------------------------------------------------- trace

std::string PipelineTrace::render() const {
  std::ostringstream os;
  for (const auto& e : events) {
    os << e.cycle << " ";
    switch (e.kind) {
      case TraceEvent::Kind::Fetch: os << "fetch"; break;
      case TraceEvent::Kind::Issue: os << "issue"; break;
      case TraceEvent::Kind::Execute: os << "exec"; break;
      case TraceEvent::Kind::Retire: os << "retire"; break;
      case TraceEvent::Kind::Squash: os << "squash"; break;
      case TraceEvent::Kind::Detect: os << "detect"; break;
      case TraceEvent::Kind::Redirect: os << "redirect"; break;
      case TraceEvent::Kind::ArchEvent: os << "event"; break;
    }
    if (e.rob >= 0) os << " rob=" << e.rob;
    if (e.macro >= 0) os << " macro=" << e.macro;
    if (!e.text.empty()) os << " " << e.text;
    os << "\n";
  }
  return os.str();
}

// --------------------------------------------------------------- simulation

namespace {

bool uop_reads_creg(const MicroOp& u) {
  return u.op == Opcode::RdCreg64 || u.op == Opcode::Unk109 ||
         u.op == Opcode::MoveMergeFlags32 || u.op == Opcode::AddSub64;
}
bool uop_writes_creg(const MicroOp& u) {
  return u.op == Opcode::WrCreg64 || u.op == Opcode::BtsWrCreg64;
}
bool uop_load_like(const MicroOp& u) {
  return u.is_load() || u.op == Opcode::RdCreg64 || u.op == Opcode::RdUram64 ||
         u.op == Opcode::RdSeg;
}

// register reads a uop performs, after slot resolution
std::vector<RegisterId> reg_reads(const MicroOp& u) {
  std::vector<RegisterId> out;
  auto add = [&](const Operand& o) {
    if (o.kind == Operand::Kind::Reg && is_int_reg(o.reg.reg))
      out.push_back(o.reg.reg);
  };
  for (const auto& s : u.srcs) add(s);
  if (u.target) add(*u.target);
  // sub-width destination writes merge into the old value
  if (u.dst && u.dst->kind == Operand::Kind::Reg &&
      (u.dst->reg.width == Width::W8 || u.dst->reg.width == Width::W16))
    add(*u.dst);
  return out;
}

std::optional<RegisterId> reg_written(const MicroOp& u) {
  if (u.op == Opcode::CmpUjmpCc || u.op == Opcode::BtUjmpCc) {
    if (!u.srcs.empty() && u.srcs[0].kind == Operand::Kind::Reg)
      return u.srcs[0].reg.reg;
    return std::nullopt;
  }
  if (u.op == Opcode::GenArithFlags) {
    if (u.srcs.size() > 1 && u.srcs[1].kind == Operand::Kind::Reg)
      return u.srcs[1].reg.reg;
    return std::nullopt;
  }
  if (u.dst && u.dst->kind == Operand::Kind::Reg) return u.dst->reg.reg;
  return std::nullopt;
}

MicroOp resolve_uop(const MicroOp& u, const MacroBinding& bind) {
  MicroOp r = u;
  if (r.dst) *r.dst = resolve_operand(*r.dst, bind);
  for (auto& s : r.srcs) s = resolve_operand(s, bind);
  if (r.target) *r.target = resolve_operand(*r.target, bind);
  return r;
}

}  // namespace

class RobValueSource : public ValueSource {
 public:
  RobValueSource(const std::vector<RobEntry>& rob, const MachineState& mach,
                 const RobEntry& self, size_t self_idx)
      : rob_(rob), mach_(mach), self_(self), self_idx_(self_idx) {}

  TaintedValue reg(RegisterId r) override {
    for (const auto& [rid, prod] : self_.reg_src)
      if (rid == r) return rob_[prod].result;
    return mach_.reg(r);
  }
  TaintedValue creg(uint16_t addr) override { return mach_.read_creg(addr); }
  TaintedValue uram(uint16_t addr) override { return mach_.read_uram(addr); }
  TaintedValue seg(SegReg s) override { return mach_.read_seg(s); }
  TaintedValue mem(uint64_t addr, unsigned bytes) override {
    TaintedValue v;
    for (unsigned i = 0; i < bytes; ++i) {
      uint64_t a = addr + i;
      bool forwarded = false;
      for (size_t j = self_idx_; j-- > 0;) {
        const RobEntry& e = rob_[j];
        if (e.st == RobEntry::St::Squashed || !e.uop.is_store()) continue;
        if (e.st == RobEntry::St::Issued) continue;  // gated out beforehand
        for (const auto& ef : e.effects) {
          if (ef.target != WriteEffect::Target::Mem) continue;
          if (a >= ef.addr && a < ef.addr + ef.bytes) {
            v.data |= ((ef.value.data >> (8 * (a - ef.addr))) & 0xFF)
                      << (8 * i);
            v.taint.merge(ef.value.taint);
            forwarded = true;
          }
          break;
        }
        if (forwarded) break;
      }
      if (!forwarded) {
        TaintedValue b = mach_.read_mem(a, 1);
        v.data |= (b.data & 0xFF) << (8 * i);
        v.taint.merge(b.taint);
      }
    }
    v.flags = flags_logic(v.data, Width::W64);
    return v;
  }

 private:
  const std::vector<RobEntry>& rob_;
  const MachineState& mach_;
  const RobEntry& self_;
  size_t self_idx_;
};

Simulation::Simulation(const MacroProgram& prog, const Scenario& sc,
                       const SimConfig& cfg, CacheModel* cache)
    : prog_(prog), sc_(sc), cfg_(cfg), cache_(cache), mach_(sc.init) {
  cfg_.apply(sc.config_kv);
  rename_.fill(-1);
  for (const auto& m : prog_)
    for (const auto& [code, name] : m.bind.event_names)
      event_names_[code] = name;
  for (uint64_t a : sc.flush) cache_->flush(a);
}

void Simulation::trace_ev(TraceEvent::Kind k, int rob, int macro,
                          std::string text) {
  trace_.events.push_back(TraceEvent{cycle_, k, rob, macro, std::move(text)});
}

int Simulation::rob_occupancy() const {
  int n = 0;
  for (size_t i = retire_ptr_; i < rob_.size(); ++i)
    if (rob_[i].st == RobEntry::St::Issued ||
        rob_[i].st == RobEntry::St::Executed)
      ++n;
  return n;
}

bool Simulation::deps_ready(const RobEntry& e) const {
  for (const auto& [rid, prod] : e.reg_src) {
    const RobEntry& p = rob_[prod];
    if (p.st == RobEntry::St::Issued) return false;
    if (p.ready_cycle > cycle_) return false;
  }
  return true;
}

bool Simulation::gates_open(const RobEntry& e) const {
  auto done = [&](const RobEntry& x) {
    return x.st == RobEntry::St::Squashed ||
           ((x.st == RobEntry::St::Executed ||
             x.st == RobEntry::St::Retired) &&
            x.ready_cycle <= cycle_);
  };
  if (e.gate_all_before > 0)
    for (int i = 0; i < e.gate_all_before; ++i)
      if (!done(rob_[i])) return false;
  if (e.gate_loads_before > 0)
    for (int i = 0; i < e.gate_loads_before; ++i)
      if (uop_load_like(rob_[i].uop) && !done(rob_[i])) return false;
  if (e.uop.op == Opcode::Lfence)
    for (size_t i = 0; i < rob_.size(); ++i) {
      if (&rob_[i] == &e) break;
      if (!done(rob_[i])) return false;
    }
  return true;
}

bool Simulation::exec_order_ok(size_t idx) const {
  const RobEntry& e = rob_[idx];
  auto completed = [&](const RobEntry& x) {
    return x.st == RobEntry::St::Squashed ||
           ((x.st == RobEntry::St::Executed ||
             x.st == RobEntry::St::Retired) &&
            x.ready_cycle <= cycle_);
  };
  const MicroOp& u = e.uop;
  bool mem_reader = u.is_load();
  bool mem_writer = u.is_store() || u.op == Opcode::Cflush;
  bool creg_op = uop_reads_creg(u) || uop_writes_creg(u);
  bool uram_op = u.is_uram_access();
  for (size_t i = 0; i < idx; ++i) {
    const RobEntry& o = rob_[i];
    if (o.st == RobEntry::St::Squashed) continue;
    const MicroOp& ou = o.uop;
    if ((mem_reader || mem_writer) &&
        (ou.is_store() || ou.op == Opcode::Cflush) && !completed(o))
      return false;
    if (creg_op && (uop_reads_creg(ou) || uop_writes_creg(ou)) &&
        !completed(o))
      return false;
    if (uram_op && ou.is_uram_access() && !completed(o)) return false;
    // indirect branches wait for all prior branches to resolve
    if (u.is_indirect_branch() && !u.is_cond_branch() && ou.is_branch() &&
        !completed(o))
      return false;
  }
  return true;
}

void Simulation::start_macro(int idx) {
  const MacroOp& m = prog_[idx];
  fe_.ms_active = true;
  fe_.ms_prog = m.prog();
  fe_.ms_macro_op = &m;
  fe_.upc = m.prog()->entry;
  fe_.ms_macro = idx;
  fe_.slot = 0;
  fe_.next_macro = idx + 1;
  // microprograms implicitly start with LFNCEMARK and SYNCMARK
  fe_.lfnce_mark = static_cast<int>(rob_.size());
  fe_.sync_mark = static_cast<int>(rob_.size());
}

void Simulation::apply_seqw(const SeqDirective& s) {
  switch (s.kind) {
    case SeqKind::None:
      fe_.upc += 3;
      break;
    case SeqKind::Uend0:
    case SeqKind::Uend2: {
      fe_.ms_active = false;
      for (size_t i = rob_.size(); i-- > 0;)
        if (rob_[i].macro == fe_.ms_macro) {
          rob_[i].last_of_macro = true;
          break;
        }
      break;
    }
    case SeqKind::Goto:
      trace_ev(TraceEvent::Kind::Redirect, -1, fe_.ms_macro,
               "seqw-goto " + std::to_string(s.target));
      fe_.upc = s.target;
      break;
    case SeqKind::LfnceMark:
      fe_.lfnce_mark = static_cast<int>(rob_.size());
      fe_.upc += 3;
      break;
    case SeqKind::SyncMark:
      fe_.sync_mark = static_cast<int>(rob_.size());
      fe_.upc += 3;
      break;
    case SeqKind::LfnceWait:
      fe_.gate_loads_before = std::max(fe_.gate_loads_before, fe_.lfnce_mark);
      fe_.upc += 3;
      break;
    case SeqKind::SyncWait:
      fe_.gate_all_before = std::max(fe_.gate_all_before, fe_.sync_mark);
      fe_.upc += 3;
      break;
    case SeqKind::SyncFull:
      fe_.gate_all_before =
          std::max(fe_.gate_all_before, static_cast<int>(rob_.size()));
      fe_.upc += 3;
      break;
  }
}

bool Simulation::issue_one(const MicroOp& u, const MacroOp& mop, int macro_idx,
                           bool ms, uint32_t uaddr) {
  RobEntry e;
  e.uop = resolve_uop(u, mop.bind);
  e.macro = macro_idx;
  e.ms = ms;
  e.issue_cycle = cycle_;
  e.uaddr = uaddr;
  e.gate_all_before = fe_.gate_all_before;
  e.gate_loads_before = fe_.gate_loads_before;
  e.pretty = uop_to_string(e.uop);
  for (RegisterId r : reg_reads(e.uop)) {
    int prod = rename_[int_reg_slot(r)];
    if (prod >= 0) e.reg_src.emplace_back(r, prod);
  }
  int id = static_cast<int>(rob_.size());
  if (auto w = reg_written(e.uop)) {
    e.result_reg = *w;
    e.writes_reg = true;
    rename_[int_reg_slot(*w)] = id;
  }
  if (e.uop.op == Opcode::Lfence) fe_.lfence_rob = id;
  trace_.counters.uops_issued++;
  if (ms) trace_.counters.ms_uops++;
  rob_.push_back(std::move(e));
  trace_ev(TraceEvent::Kind::Issue, id, macro_idx, rob_.back().pretty);
  return true;
}

void Simulation::do_issue() {
  if (halted_ || issue_stopped_) return;
  if (fe_.stalled_indirect) return;
  if (fe_.lfence_rob >= 0) {
    const RobEntry& l = rob_[fe_.lfence_rob];
    if (l.st == RobEntry::St::Issued || l.ready_cycle > cycle_) return;
    fe_.lfence_rob = -1;
  }

  if (fe_.ms_active) {
    const Triad& t = fe_.ms_prog->triads[fe_.upc / 3];
    std::optional<uint32_t> taken_target;
    for (; fe_.slot < 3; ++fe_.slot) {
      const MicroOp& u = t.uops[fe_.slot];
      if (u.pad) continue;
      if (rob_occupancy() >= cfg_.rob_size) return;  // resume here next cycle
      issue_one(u, *fe_.ms_macro_op, fe_.ms_macro, true, fe_.upc + fe_.slot);
      if (u.is_branch()) {
        Prediction p =
            predict(u, triad_position(fe_.upc + fe_.slot), policy_);
        RobEntry& be = rob_.back();
        if (p == Prediction::Taken) {
          be.predicted_taken = true;
          Operand tgt = resolve_operand(*u.target, fe_.ms_macro_op->bind);
          taken_target = static_cast<uint32_t>(tgt.imm);
        } else if (p == Prediction::Stall) {
          fe_.stalled_indirect = true;
          fe_.stall_rob = static_cast<int>(rob_.size()) - 1;
          ++fe_.slot;
          return;
        }
      }
    }
    fe_.slot = 0;
    if (taken_target)
      fe_.upc = *taken_target;
    else
      apply_seqw(t.seqw);
    return;  // one triad per cycle while the microsequencer is active
  }

  // MITE path: up to decode_macros_per_cycle simple macro-ops per cycle
  int budget = cfg_.mite_uops_per_cycle;
  int macros = cfg_.decode_macros_per_cycle;
  while (macros > 0 && budget > 0 &&
         fe_.next_macro < static_cast<int>(prog_.size())) {
    const MacroOp& m = prog_[fe_.next_macro];
    if (m.is_ms()) {
      start_macro(fe_.next_macro);  // first triad goes next cycle
      return;
    }
    const MiteBody& b = std::get<MiteBody>(m.body);
    int n = static_cast<int>(b.uops.size());
    if (n > budget) return;
    if (rob_occupancy() + n > cfg_.rob_size) return;
    for (int i = 0; i < n; ++i) {
      issue_one(b.uops[i], m, fe_.next_macro, false, 0);
      if (i == n - 1) rob_.back().last_of_macro = true;
    }
    budget -= n;
    --macros;
    ++fe_.next_macro;
  }
}

void Simulation::do_execute() {
  for (size_t idx = retire_ptr_; idx < rob_.size(); ++idx) {
    RobEntry& e = rob_[idx];
    if (e.st != RobEntry::St::Issued) continue;
    if (!deps_ready(e) || !gates_open(e) || !exec_order_ok(idx)) continue;

    RobValueSource vs(rob_, mach_, e, idx);
    // predicate taint for the leak oracle, read before execution
    TaintSet pred_taint;
    if (e.uop.is_cond_branch() && !e.uop.srcs.empty() &&
        e.uop.srcs[0].kind == Operand::Kind::Reg)
      pred_taint = vs.reg(e.uop.srcs[0].reg.reg).taint;

    ExecResult r = exec_uop(e.uop, prog_[e.macro].bind, vs);
    int lat = cfg_.lat_alu;
    switch (r.lat) {
      case LatClass::Alu: lat = cfg_.lat_alu; break;
      case LatClass::Creg: lat = cfg_.lat_creg; break;
      case LatClass::Uram: lat = cfg_.lat_uram; break;
      case LatClass::Seg: lat = cfg_.lat_seg; break;
      case LatClass::Div: lat = cfg_.lat_div; break;
      case LatClass::Barrier: lat = cfg_.lat_alu; break;
      case LatClass::Load: lat = cfg_.lat_alu; break;  // set from cache below
    }
    if (r.mem) {
      if (r.mem->is_flush) {
        cache_->flush(r.mem->addr);
      } else {
        int mlat = cache_->access(r.mem->addr);
        if (r.lat == LatClass::Load) lat = mlat;
        ChannelTouch touch;
        touch.cycle = cycle_;
        touch.addr = r.mem->addr;
        touch.is_store = r.mem->is_store;
        touch.addr_taint = r.mem->addr_taint;
        for (const auto& ef : r.effects)
          if (ef.target == WriteEffect::Target::Reg ||
              ef.target == WriteEffect::Target::Mem)
            touch.data_taint.merge(ef.value.taint);
        touch.rob = static_cast<int>(idx);
        touch.macro = e.macro;
        touch.uop = e.pretty;
        trace_.touches.push_back(std::move(touch));
      }
    }

    e.st = RobEntry::St::Executed;
    e.ready_cycle = cycle_ + lat;
    e.mem = r.mem;
    e.event_code = r.event_code;
    for (auto& ef : r.effects) {
      if (!ef.buffered) {
        // unbuffered: applied at execute, persists through squash
        if (ef.target == WriteEffect::Target::Creg)
          mach_.write_creg(static_cast<uint16_t>(ef.addr), ef.value);
        else if (ef.target == WriteEffect::Target::Uram)
          mach_.write_uram(static_cast<uint16_t>(ef.addr), ef.value);
        continue;
      }
      if (ef.target == WriteEffect::Target::Reg) {
        e.result = ef.value;
        e.has_result = true;
        e.result_reg = ef.reg;
      }
      e.effects.push_back(ef);
    }
    if (r.branch) {
      e.br = *r.branch;
      bool mispred = r.branch->taken != e.predicted_taken;
      if (fe_.stalled_indirect && fe_.stall_rob == static_cast<int>(idx)) {
        // no prediction was made: resume fetch at the resolved target
        mispred = false;
        fe_.stalled_indirect = false;
        fe_.stall_rob = -1;
        fe_.upc = r.branch->target;
        fe_.slot = 0;
        trace_ev(TraceEvent::Kind::Redirect, static_cast<int>(idx), e.macro,
                 "indirect-resolved");
      }
      e.mispredicted = mispred;
      if (mispred) {
        e.detect_at = e.ready_cycle + cfg_.detect_delay;
        e.retire_eligible = e.ready_cycle + cfg_.correction_delay;
      }
      BranchObs obs;
      obs.cycle = e.ready_cycle;
      obs.rob = static_cast<int>(idx);
      obs.macro = e.macro;
      obs.taken = r.branch->taken;
      obs.mispredicted = mispred;
      obs.pred_taint = pred_taint;
      obs.uop = e.pretty;
      trace_.branches.push_back(std::move(obs));
    }
    if (e.event_code && *e.event_code != 0)
      e.retire_eligible = e.ready_cycle + cfg_.correction_delay;
    trace_ev(TraceEvent::Kind::Execute, static_cast<int>(idx), e.macro,
             e.pretty);
  }
}

void Simulation::do_detect() {
  if (issue_stopped_) return;
  for (size_t i = retire_ptr_; i < rob_.size(); ++i) {
    const RobEntry& e = rob_[i];
    if (e.st != RobEntry::St::Executed || !e.mispredicted) continue;
    if (e.detect_at >= 0 && cycle_ >= e.detect_at) {
      issue_stopped_ = true;
      trace_ev(TraceEvent::Kind::Detect, static_cast<int>(i), e.macro,
               "misprediction detected, issue stopped");
      return;
    }
  }
}

void Simulation::squash_younger(size_t from_rob, const char* why) {
  for (size_t i = from_rob; i < rob_.size(); ++i) {
    RobEntry& e = rob_[i];
    if (e.st == RobEntry::St::Retired || e.st == RobEntry::St::Squashed)
      continue;
    e.st = RobEntry::St::Squashed;
    trace_.squashed_uops.emplace_back(e.macro, e.pretty);
    trace_ev(TraceEvent::Kind::Squash, static_cast<int>(i), e.macro,
             std::string(why) + ": " + e.pretty);
  }
  // rebuild the rename map from surviving entries
  rename_.fill(-1);
  for (size_t i = 0; i < from_rob; ++i) {
    const RobEntry& e = rob_[i];
    if (e.st == RobEntry::St::Squashed || e.st == RobEntry::St::Retired)
      continue;
    if (e.writes_reg) rename_[int_reg_slot(e.result_reg)] = static_cast<int>(i);
  }
  if (fe_.lfence_rob >= static_cast<int>(from_rob)) fe_.lfence_rob = -1;
  if (fe_.stall_rob >= static_cast<int>(from_rob)) {
    fe_.stall_rob = -1;
    fe_.stalled_indirect = false;
  }
  issue_stopped_ = false;
}

void Simulation::do_retire() {
  int budget = cfg_.retire_per_cycle;
  while (retire_ptr_ < rob_.size()) {
    RobEntry& e = rob_[retire_ptr_];
    if (e.st == RobEntry::St::Squashed) {
      ++retire_ptr_;
      continue;
    }
    if (budget == 0) return;
    if (e.st != RobEntry::St::Executed || e.ready_cycle > cycle_) return;
    if (e.retire_eligible >= 0 && cycle_ < e.retire_eligible) return;

    // commit buffered effects
    for (const auto& ef : e.effects) {
      switch (ef.target) {
        case WriteEffect::Target::Reg:
          mach_.reg(ef.reg) = ef.value;
          break;
        case WriteEffect::Target::Mem:
          mach_.write_mem(ef.addr, ef.value.data, ef.bytes, ef.value.taint);
          break;
        case WriteEffect::Target::SegBase:
          mach_.segbase[ef.addr & 1] = ef.value;
          break;
        default:
          break;
      }
    }
    e.st = RobEntry::St::Retired;
    trace_.counters.uops_retired++;
    if (e.last_of_macro) trace_.counters.macro_ops_retired++;
    trace_ev(TraceEvent::Kind::Retire, static_cast<int>(retire_ptr_), e.macro,
             e.pretty);
    size_t idx = retire_ptr_;
    ++retire_ptr_;
    --budget;

    if (e.event_code && *e.event_code != 0) {
      std::ostringstream os;
      os << "#0x" << std::hex << *e.event_code;
      auto it = event_names_.find(*e.event_code);
      PendingEvent ev{*e.event_code,
                      it != event_names_.end() ? it->second : os.str()};
      mach_.pending_event = ev;
      trace_ev(TraceEvent::Kind::ArchEvent, static_cast<int>(idx), e.macro,
               ev.name);
      squash_younger(idx + 1, "arch-event");
      trace_.arch_event = ev;
      halted_ = true;
      return;
    }

    if (e.mispredicted) {
      squash_younger(idx + 1, "mispredict");
      // redirect: mispredictions here are always "predicted not-taken,
      // actually taken", so the correct path is the taken target
      fe_.ms_active = true;
      fe_.ms_macro = e.macro;
      fe_.ms_macro_op = &prog_[e.macro];
      fe_.ms_prog = prog_[e.macro].prog();
      fe_.upc = e.br->target;
      fe_.slot = 0;
      fe_.next_macro = e.macro + 1;
      fe_.lfnce_mark = static_cast<int>(rob_.size());
      fe_.sync_mark = static_cast<int>(rob_.size());
      trace_ev(TraceEvent::Kind::Redirect, static_cast<int>(idx), e.macro,
               "to " + std::to_string(e.br->target));
      return;  // younger state changed; stop retiring this cycle
    }
  }
}

void Simulation::step() {
  do_detect();
  do_retire();
  if (!halted_) do_issue();
  if (!halted_) do_execute();
  trace_.max_rob_occupancy =
      std::max(trace_.max_rob_occupancy, static_cast<long>(rob_occupancy()));
  ++cycle_;
  if (halted_) return;
  bool fe_done = !fe_.ms_active && !fe_.stalled_indirect &&
                 fe_.next_macro >= static_cast<int>(prog_.size());
  bool rob_done = retire_ptr_ >= rob_.size();
  if (fe_done && rob_done) halted_ = true;
  if (cycle_ >= cfg_.cycle_limit) {
    trace_.cycle_limit_hit = true;
    halted_ = true;
  }
}

bool Simulation::halted() const { return halted_; }

void Simulation::finalize_trace() {
  trace_.cycles = cycle_;
  std::set<int> transient_macros;
  for (const auto& e : rob_)
    if (e.st == RobEntry::St::Squashed) transient_macros.insert(e.macro);
  trace_.counters.transient_macro_ops = transient_macros.size();
  // mark channel touches and branch observations from squashed entries
  for (auto& t : trace_.touches)
    t.transient = rob_[t.rob].st == RobEntry::St::Squashed;
  for (auto& b : trace_.branches)
    b.transient = rob_[b.rob].st == RobEntry::St::Squashed;
}

PipelineTrace Simulation::take_trace() {
  finalize_trace();
  return std::move(trace_);
}

PipelineTrace Simulation::run(const MacroProgram& prog, const Scenario& sc,
                              const SimConfig& cfg, CacheModel& cache,
                              MachineState* final_state) {
  Simulation sim(prog, sc, cfg, &cache);
  while (!sim.halted()) sim.step();
  if (final_state) *final_state = sim.state();
  return sim.take_trace();
}

CacheModel make_cache(const Scenario& sc, const SimConfig& cfg) {
  CacheModel c;
  for (uint64_t a : sc.flush) c.flush(a);
  (void)cfg;
  return c;
}

}  // namespace ucsim
