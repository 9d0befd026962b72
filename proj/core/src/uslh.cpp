#include "ucsim/uslh.hpp"

#include <algorithm>
#include <optional>
#include <set>
#include <sstream>

#include "ucsim/machine.hpp"
#include "ucsim/uasm.hpp"

namespace ucsim {

namespace {

// ----------------------------------------------------------- flattened form
//
// Microprograms are edited as a flat statement list (labels, real uops,
// sequence words) and reassembled through the canonical text form, so triad
// packing rules stay in one place.

struct FlatItem {
  enum class K : uint8_t { Label, Uop, Seqw } k = K::Uop;
  std::string label;
  MicroOp uop;
  SeqDirective seqw;
  uint32_t addr = 0;  // original micro-address (uops only)
};

std::vector<FlatItem> flatten(const Microprogram& p) {
  std::vector<FlatItem> out;
  for (uint32_t ti = 0; ti < p.triads.size(); ++ti) {
    uint32_t addr = ti * 3;
    auto labels = p.labels_at(addr);
    std::sort(labels.begin(), labels.end());
    for (auto& l : labels) {
      FlatItem it;
      it.k = FlatItem::K::Label;
      it.label = l;
      out.push_back(it);
    }
    const Triad& t = p.triads[ti];
    for (int s = 0; s < 3; ++s) {
      if (t.uops[s].pad) continue;
      FlatItem it;
      it.k = FlatItem::K::Uop;
      it.uop = t.uops[s];
      it.addr = addr + s;
      out.push_back(it);
    }
    if (t.seqw.kind != SeqKind::None) {
      FlatItem it;
      it.k = FlatItem::K::Seqw;
      it.seqw = t.seqw;
      out.push_back(it);
    }
  }
  return out;
}

Microprogram rebuild(const std::string& name,
                     const std::vector<FlatItem>& items) {
  std::ostringstream os;
  for (const auto& it : items) {
    switch (it.k) {
      case FlatItem::K::Label:
        os << it.label << ":\n";
        break;
      case FlatItem::K::Uop:
        os << "  " << uop_to_string(it.uop) << "\n";
        break;
      case FlatItem::K::Seqw:
        os << "  SEQW " << seq_name(it.seqw.kind);
        if (it.seqw.kind == SeqKind::Goto) os << " " << it.seqw.label;
        os << "\n";
        break;
    }
  }
  return assemble_text(name, os.str());
}

// ------------------------------------------------------------ loop regions

struct LoopRegion {
  std::string label;
  uint32_t lo = 0, hi = 0;  // micro-address range [lo, hi]
  bool has_mem_access = false;
};

std::vector<LoopRegion> find_loops(const Microprogram& p) {
  std::vector<LoopRegion> out;
  auto add_region = [&](uint32_t target, uint32_t source,
                        const std::string& label) {
    LoopRegion r;
    r.label = label;
    r.lo = target;
    r.hi = source;
    for (uint32_t a = r.lo; a <= r.hi && a < p.size(); ++a)
      if (!p.at(a).pad && p.at(a).is_mem_access()) r.has_mem_access = true;
    out.push_back(r);
  };
  for (uint32_t ti = 0; ti < p.triads.size(); ++ti) {
    const Triad& t = p.triads[ti];
    if (t.seqw.kind == SeqKind::Goto && t.seqw.target <= ti * 3)
      add_region(t.seqw.target, ti * 3 + 2, t.seqw.label);
    for (int s = 0; s < 3; ++s) {
      const MicroOp& u = t.uops[s];
      if (u.pad || !u.is_branch() || !u.target) continue;
      if (u.target->kind == Operand::Kind::Label &&
          u.target->imm <= ti * 3 + s)
        add_region(static_cast<uint32_t>(u.target->imm), ti * 3 + s,
                   u.target->name);
    }
  }
  return out;
}

bool in_region(const std::vector<LoopRegion>& loops, uint32_t addr) {
  for (const auto& r : loops)
    if (addr >= r.lo && addr <= r.hi) return true;
  return false;
}

// ------------------------------------------------------------ path walking

// Follows the statically predicted path (branches fall through, forward
// GOTOs followed) from a flat index. Stops at UEND, at a backward GOTO, or
// after a step bound.
struct Walk {
  std::vector<size_t> uops;  // indices into the flat list
  bool hit_cycle = false;
  bool hit_end = false;
};

std::optional<size_t> flat_label_pos(const std::vector<FlatItem>& items,
                                     const std::string& label) {
  for (size_t i = 0; i < items.size(); ++i)
    if (items[i].k == FlatItem::K::Label && items[i].label == label) return i;
  return std::nullopt;
}

Walk walk_predicted(const std::vector<FlatItem>& items, size_t start,
                    size_t bound = 4096) {
  Walk w;
  size_t i = start;
  std::set<size_t> seen;
  while (i < items.size() && w.uops.size() < bound) {
    const FlatItem& it = items[i];
    if (it.k == FlatItem::K::Uop) {
      w.uops.push_back(i);
      ++i;
      continue;
    }
    if (it.k == FlatItem::K::Label) {
      ++i;
      continue;
    }
    // sequence word
    if (it.seqw.kind == SeqKind::Uend0 || it.seqw.kind == SeqKind::Uend2) {
      w.hit_end = true;
      return w;
    }
    if (it.seqw.kind == SeqKind::Goto) {
      auto pos = flat_label_pos(items, it.seqw.label);
      if (!pos || *pos <= start || seen.count(*pos)) {
        w.hit_cycle = true;
        return w;
      }
      seen.insert(*pos);
      if (*pos < i) {
        w.hit_cycle = true;
        return w;
      }
      i = *pos;
      continue;
    }
    ++i;
  }
  return w;
}

// Walks the taken path of a branch looking for a nonzero SIGEVENT before the
// microprogram ends; nested branches fall through.
bool taken_path_raises(const std::vector<FlatItem>& items,
                       const std::string& target_label, uint64_t* code) {
  auto pos = flat_label_pos(items, target_label);
  if (!pos) return false;
  Walk w = walk_predicted(items, *pos);
  for (size_t idx : w.uops) {
    const MicroOp& u = items[idx].uop;
    if (u.op == Opcode::SigEvent && !u.srcs.empty() &&
        u.srcs[0].kind == Operand::Kind::Imm && u.srcs[0].imm != 0) {
      *code = u.srcs[0].imm;
      return true;
    }
  }
  return false;
}

// ------------------------------------------------- symbolic output compare

// Symbolic expressions as canonical strings; enough to decide whether two
// loop-free paths compute the same architectural outputs.
struct SymState {
  std::map<std::string, std::string> regs;  // key: "r:rax" or "slot:r64"
  std::map<std::string, std::string> outputs;  // arch-visible writes

  std::string key_of(const Operand& o) const {
    if (o.kind == Operand::Kind::Reg) return "r:" + reg_name(o.reg.reg);
    if (o.kind == Operand::Kind::Slot) return "slot:" + o.name;
    return "";
  }
  std::string read(const Operand& o) {
    switch (o.kind) {
      case Operand::Kind::Reg:
      case Operand::Kind::Slot: {
        std::string k = key_of(o);
        auto it = regs.find(k);
        return it != regs.end() ? it->second : k;
      }
      case Operand::Kind::Imm:
      case Operand::Kind::Label: {
        std::ostringstream os;
        os << "imm:" << o.imm;
        return os.str();
      }
      case Operand::Kind::Seg:
        return std::string("seg:") + (o.seg == SegReg::FS   ? "fs"
                                      : o.seg == SegReg::GS ? "gs"
                                                            : "ds");
    }
    return "?";
  }
};

void sym_exec(SymState& st, const MicroOp& u) {
  std::ostringstream ex;
  ex << opcode_name(u.op);
  if (u.cc) ex << cond_name(*u.cc);
  ex << "(";
  bool first = true;
  for (const auto& s : u.srcs) {
    if (!first) ex << ",";
    ex << st.read(s);
    first = false;
  }
  ex << ")";
  std::string expr = ex.str();

  bool arch_write = false;
  std::string out_key;
  if (u.dst) {
    std::string k = st.key_of(*u.dst);
    st.regs[k] = expr;
    if (u.dst->kind == Operand::Kind::Slot ||
        (u.dst->kind == Operand::Kind::Reg &&
         u.dst->reg.reg.cls == RegClass::IntArch)) {
      arch_write = true;
      out_key = k;
    }
  }
  if (u.op == Opcode::WrCreg64 || u.op == Opcode::BtsWrCreg64) {
    arch_write = true;
    out_key = "creg[" + st.read(u.srcs.back()) + "]";
  } else if (u.op == Opcode::WrUram64) {
    arch_write = true;
    out_key = "uram[" + st.read(u.srcs.back()) + "]";
  } else if (u.is_store()) {
    arch_write = true;
    out_key = "mem[" + st.read(u.srcs[1]) + "]";
  }
  if (arch_write) st.outputs[out_key] = expr;
}

// -------------------------------------------------------- concrete walking

struct ConcreteStep {
  size_t flat_idx = 0;
  uint32_t addr = 0;
  MicroOp uop;  // slot-resolved
  std::optional<RegisterId> wreg;
  std::vector<RegisterId> reads;
  bool secret_from_location = false;  // load-like uop returning secret data
  bool secret_addr_access = false;    // memory access with a secret address
};

std::vector<RegisterId> uop_reg_reads(const MicroOp& u) {
  std::vector<RegisterId> out;
  auto add = [&](const Operand& o) {
    if (o.kind == Operand::Kind::Reg && is_int_reg(o.reg.reg))
      out.push_back(o.reg.reg);
  };
  for (const auto& s : u.srcs) add(s);
  if (u.target) add(*u.target);
  return out;
}

std::optional<RegisterId> uop_reg_write(const MicroOp& u) {
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

// Executes the predicted path concretely against the scenario state.
// Returns the step list; stops where walk_predicted stops or on exec errors
// (e.g. unbound slots when no binding is supplied).
std::vector<ConcreteStep> concrete_predicted_path(
    const std::vector<FlatItem>& items, const Scenario& sc,
    const MacroBinding& bind) {
  std::vector<ConcreteStep> steps;
  Walk w = walk_predicted(items, 0);
  MachineState st = sc.init;
  for (size_t idx : w.uops) {
    ConcreteStep cs;
    cs.flat_idx = idx;
    cs.addr = items[idx].addr;
    MicroOp resolved = items[idx].uop;
    try {
      if (resolved.dst) *resolved.dst = resolve_operand(*resolved.dst, bind);
      for (auto& s : resolved.srcs) s = resolve_operand(s, bind);
      if (resolved.target)
        *resolved.target = resolve_operand(*resolved.target, bind);
      cs.uop = resolved;
      cs.wreg = uop_reg_write(resolved);
      cs.reads = uop_reg_reads(resolved);

      if (resolved.is_mem_access())
        for (RegisterId rr : cs.reads)
          if (st.reg(rr).taint.any_secret(*sc.labels))
            cs.secret_addr_access = true;

      StateValueSource vs(st);
      ExecResult r = exec_uop(resolved, bind, vs);
      bool loc_read = resolved.is_load() || resolved.op == Opcode::RdCreg64 ||
                      resolved.op == Opcode::RdUram64 ||
                      resolved.op == Opcode::RdSeg;
      for (const auto& ef : r.effects) {
        if (ef.target == WriteEffect::Target::Reg && loc_read &&
            ef.value.taint.any_secret(*sc.labels)) {
          // fresh only if no source register already carried the secret
          bool from_regs = false;
          for (RegisterId rr : cs.reads)
            if (st.reg(rr).taint.any_secret(*sc.labels)) from_regs = true;
          cs.secret_from_location = !from_regs;
        }
        // apply everything immediately (unbuffered distinction is moot here)
        switch (ef.target) {
          case WriteEffect::Target::Reg: st.reg(ef.reg) = ef.value; break;
          case WriteEffect::Target::Creg:
            st.write_creg(static_cast<uint16_t>(ef.addr), ef.value);
            break;
          case WriteEffect::Target::Uram:
            st.write_uram(static_cast<uint16_t>(ef.addr), ef.value);
            break;
          case WriteEffect::Target::Mem:
            st.write_mem(ef.addr, ef.value.data, ef.bytes, ef.value.taint);
            break;
          case WriteEffect::Target::SegBase:
            st.segbase[ef.addr & 1] = ef.value;
            break;
        }
      }
    } catch (const ExecError&) {
      // unbound slot or unmapped access: stop the concrete analysis here
      break;
    }
    steps.push_back(std::move(cs));
  }
  return steps;
}

}  // namespace

// -------------------------------------------------------------------- scan

std::vector<ScanFinding> scan(const Microprogram& p, const Scenario& sc,
                              const MacroBinding& bind) {
  std::vector<ScanFinding> out;
  std::vector<FlatItem> items = flatten(p);
  std::vector<LoopRegion> loops = find_loops(p);

  // concrete predicted path for the in-microprogram leak check
  std::vector<ConcreteStep> steps = concrete_predicted_path(items, sc, bind);
  auto secret_addr_after = [&](size_t branch_flat) {
    bool past_branch = false;
    for (const auto& cs : steps) {
      if (cs.flat_idx == branch_flat) {
        past_branch = true;
        continue;
      }
      if (past_branch && cs.secret_addr_access) return true;
    }
    return false;
  };

  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i].k != FlatItem::K::Uop) continue;
    const MicroOp& u = items[i].uop;
    if (!u.is_cond_branch()) continue;
    uint32_t addr = items[i].addr;
    ScanFinding f;
    f.branch_addr = addr;

    // exception bypass: the taken path raises a hardware event
    uint64_t code = 0;
    if (u.target && u.target->kind == Operand::Kind::Label &&
        taken_path_raises(items, u.target->name, &code)) {
      f.cls = AttackClass::MEB;
      std::ostringstream ev;
      ev << "taken path '" << u.target->name << "' raises SIGEVENT(0x"
         << std::hex << code << ")";
      f.evidence = ev.str();
      out.push_back(std::move(f));
      continue;
    }

    // in-microprogram leak: branch sits in a loop whose body touches memory,
    // or the predicted path reaches a secret-addressed access
    bool mil = false;
    std::string mil_ev;
    for (const auto& r : loops) {
      if (addr >= r.lo && addr <= r.hi && r.has_mem_access) {
        mil = true;
        mil_ev = "loop '" + r.label +
                 "' keeps speculating past the exit; body touches memory";
      }
    }
    if (!mil && secret_addr_after(i)) {
      mil = true;
      mil_ev = "predicted path reaches a secret-addressed memory access";
    }
    if (mil) {
      f.cls = AttackClass::MIL;
      f.evidence = mil_ev;
      out.push_back(std::move(f));
      continue;
    }

    // value injection: taken and fall-through paths expose different
    // architectural outputs (loop-free paths only)
    Walk fall = walk_predicted(items, i + 1);
    std::optional<size_t> tpos;
    if (u.target && u.target->kind == Operand::Kind::Label)
      tpos = flat_label_pos(items, u.target->name);
    if (!fall.hit_cycle && tpos) {
      Walk taken = walk_predicted(items, *tpos);
      if (!taken.hit_cycle) {
        SymState sf, stk;
        for (size_t idx : fall.uops) sym_exec(sf, items[idx].uop);
        for (size_t idx : taken.uops) sym_exec(stk, items[idx].uop);
        if (sf.outputs != stk.outputs) {
          f.cls = AttackClass::MVI;
          std::ostringstream ev;
          ev << "paths write different architectural outputs:";
          std::set<std::string> keys;
          for (const auto& [k, v] : sf.outputs) keys.insert(k);
          for (const auto& [k, v] : stk.outputs) keys.insert(k);
          for (const auto& k : keys) {
            auto a = sf.outputs.find(k);
            auto b = stk.outputs.find(k);
            if (a == sf.outputs.end() || b == stk.outputs.end() ||
                a->second != b->second)
              ev << " " << k;
          }
          f.evidence = ev.str();
          out.push_back(std::move(f));
          continue;
        }
      }
    }
    // benign: no finding
  }
  return out;
}

// ------------------------------------------------------------------ harden

namespace {

struct PlannedSelect {
  size_t branch_flat = 0;   // flat index of the branch
  size_t insert_after = 0;  // flat index the select goes after
  bool before = false;      // insert before insert_after instead
  Operand target;           // register operand to guard
  int order = 0;            // branch order for stable placement
};

// abstract zero-tracking for the exposed-output rule
enum class Abs : uint8_t { Zero, Unknown };

Abs abs_of_operand(const Operand& o, const std::map<std::string, Abs>& regs) {
  if (o.kind == Operand::Kind::Imm) return o.imm == 0 ? Abs::Zero : Abs::Unknown;
  if (o.kind == Operand::Kind::Reg || o.kind == Operand::Kind::Slot) {
    std::string k = o.kind == Operand::Kind::Reg ? "r:" + reg_name(o.reg.reg)
                                                 : "slot:" + o.name;
    auto it = regs.find(k);
    return it != regs.end() ? it->second : Abs::Unknown;
  }
  return Abs::Unknown;
}

Abs abs_result(const MicroOp& u, const std::map<std::string, Abs>& regs) {
  auto a = [&](size_t i) { return abs_of_operand(u.srcs[i], regs); };
  switch (u.op) {
    case Opcode::Move64:
    case Opcode::ZeroExt32:
    case Opcode::ZeroExt64:
    case Opcode::ZeroExtN:
    case Opcode::Shr32:
    case Opcode::Shr64:
    case Opcode::ShrDsz64:
    case Opcode::Shl64:
    case Opcode::Rol32:
      return u.srcs.empty() ? Abs::Unknown : a(0);
    case Opcode::And32:
    case Opcode::And64:
      return (a(0) == Abs::Zero || a(1) == Abs::Zero) ? Abs::Zero
                                                      : Abs::Unknown;
    case Opcode::Or32:
    case Opcode::Or64:
    case Opcode::Add32:
    case Opcode::Add64:
    case Opcode::Xor64:
    case Opcode::Sub32:
    case Opcode::Sub64:
      if (u.srcs.size() < 2) return a(0);
      return (a(0) == Abs::Zero && a(1) == Abs::Zero) ? Abs::Zero
                                                      : Abs::Unknown;
    case Opcode::Select:
      // on the mispredicted path an inserted select reads as zero
      return Abs::Zero;
    default:
      return Abs::Unknown;
  }
}

std::string reg_key(const Operand& o) {
  if (o.kind == Operand::Kind::Reg) return "r:" + reg_name(o.reg.reg);
  if (o.kind == Operand::Kind::Slot) return "slot:" + o.name;
  return "";
}

bool same_reg_operand(const Operand& a, const Operand& b) {
  return reg_key(a) == reg_key(b) && !reg_key(a).empty();
}

}  // namespace

Microprogram harden(const Microprogram& p, const HardenPolicy& policy,
                    const Scenario& sc, const MacroBinding& bind) {
  std::vector<FlatItem> items = flatten(p);
  std::vector<LoopRegion> loops = find_loops(p);
  std::vector<ConcreteStep> steps = concrete_predicted_path(items, sc, bind);

  // map flat index -> step index on the predicted path
  std::map<size_t, size_t> step_of;
  for (size_t si = 0; si < steps.size(); ++si)
    step_of[steps[si].flat_idx] = si;

  // secret-effective registers along the predicted path (before any select)
  int nregs = kIntRegs;
  std::vector<std::vector<bool>> eff(steps.size() + 1,
                                     std::vector<bool>(nregs, false));
  {
    MachineState st = sc.init;
    for (int r = 0; r < nregs; ++r)
      eff[0][r] = st.iregs[r].taint.any_secret(*sc.labels);
    for (size_t si = 0; si < steps.size(); ++si) {
      eff[si + 1] = eff[si];
      const ConcreteStep& cs = steps[si];
      if (cs.wreg) {
        bool from_regs = false;
        for (RegisterId rr : cs.reads)
          if (eff[si][int_reg_slot(rr)]) from_regs = true;
        eff[si + 1][int_reg_slot(*cs.wreg)] =
            from_regs || cs.secret_from_location;
      }
    }
  }

  struct BranchInfo {
    size_t flat = 0;
    size_t step = 0;
    uint32_t addr = 0;
    CondCode cc{};
    Operand cond;
    bool in_loop = false;
  };
  std::vector<BranchInfo> branches;
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i].k != FlatItem::K::Uop) continue;
    const MicroOp& u = items[i].uop;
    if (!u.is_cond_branch()) continue;
    BranchInfo b;
    b.flat = i;
    b.addr = items[i].addr;
    b.cc = *u.cc;
    b.cond = u.srcs.at(0);
    b.in_loop = in_region(loops, b.addr);
    auto it = step_of.find(i);
    b.step = it != step_of.end() ? it->second : steps.size();
    branches.push_back(std::move(b));
  }

  // used scratch registers, for predicate materialization
  std::set<int> used_tmps;
  for (const auto& it : items) {
    if (it.k != FlatItem::K::Uop) continue;
    for (RegisterId r : uop_reg_reads(it.uop))
      if (r.cls == RegClass::IntTmp) used_tmps.insert(r.index);
    if (auto w = uop_reg_write(it.uop))
      if (w->cls == RegClass::IntTmp) used_tmps.insert(w->index);
  }

  std::vector<PlannedSelect> plan;
  // extra uops inserted immediately after a branch (predicate materialization)
  std::map<size_t, MicroOp> materialize;      // branch flat -> select uop
  std::map<size_t, Operand> select_cond;      // branch flat -> predicate reg
  std::map<size_t, CondCode> select_cc;       // branch flat -> select cc

  auto cond_clobbered_between = [&](const BranchInfo& b, size_t upto_flat) {
    for (size_t i = b.flat + 1; i <= upto_flat && i < items.size(); ++i) {
      if (items[i].k != FlatItem::K::Uop) continue;
      auto w = uop_reg_write(items[i].uop);
      if (w && b.cond.kind == Operand::Kind::Reg && *w == b.cond.reg.reg)
        return true;
    }
    return false;
  };

  auto ensure_predicate = [&](const BranchInfo& b, size_t insert_flat) {
    if (!cond_clobbered_between(b, insert_flat)) {
      select_cond[b.flat] = b.cond;
      select_cc[b.flat] = invert_cond(b.cc);
      return;
    }
    if (materialize.count(b.flat)) return;
    int free_tmp = -1;
    for (int t = kIntTmpRegs - 1; t >= 0; --t)
      if (!used_tmps.count(t)) {
        free_tmp = t;
        break;
      }
    if (free_tmp < 0)
      throw HardenError(
          p.name + ": unharden-able: branch at " + std::to_string(b.addr) +
          ": its condition register is redefined before the select point and "
          "no scratch register is free to carry the predicate");
    used_tmps.insert(free_tmp);
    RegisterId tf{RegClass::IntTmp, static_cast<uint8_t>(free_tmp)};
    MicroOp m;
    m.op = Opcode::Select;
    m.cc = invert_cond(b.cc);
    m.dst = Operand::make_reg(tf);
    m.srcs = {b.cond, Operand::make_imm(1)};
    materialize[b.flat] = std::move(m);
    select_cond[b.flat] = Operand::make_reg(tf);
    select_cc[b.flat] = CondCode::NZ;
  };

  auto already_guarded = [&](const BranchInfo& b, const Operand& target) {
    for (size_t i = b.flat + 1; i < items.size(); ++i) {
      if (items[i].k != FlatItem::K::Uop) continue;
      const MicroOp& u = items[i].uop;
      if (u.op == Opcode::Select && u.dst && same_reg_operand(*u.dst, target) &&
          u.srcs.size() == 2 && same_reg_operand(u.srcs[0], b.cond) &&
          same_reg_operand(u.srcs[1], target) && u.cc == invert_cond(b.cc))
        return true;
    }
    return false;
  };

  auto add_select = [&](const BranchInfo& b, const Operand& target,
                         size_t pos, bool before, int order) {
    if (already_guarded(b, target)) return;
    for (const auto& ps : plan)
      if (ps.branch_flat == b.flat && same_reg_operand(ps.target, target))
        return;
    ensure_predicate(b, before ? pos - 1 : pos);
    PlannedSelect s;
    s.branch_flat = b.flat;
    s.insert_after = pos;
    s.before = before;
    s.target = target;
    s.order = order;
    plan.push_back(std::move(s));
  };

  int order = 0;
  for (const auto& b : branches) {
    ++order;
    if (b.in_loop && policy.skip_loops) continue;

    if (b.in_loop) {
      // guard the address registers of in-loop memory accesses, right after
      // the branch
      std::set<std::string> done;
      for (const auto& r : loops) {
        if (!(b.addr >= r.lo && b.addr <= r.hi)) continue;
        for (uint32_t a = r.lo; a <= r.hi && a < p.size(); ++a) {
          const MicroOp& u = p.at(a);
          if (u.pad || !u.is_mem_access()) continue;
          for (const Operand& src : u.srcs) {
            if (src.kind != Operand::Kind::Reg) continue;
            if (u.is_store() && &src == &u.srcs[0]) continue;  // data operand
            if (done.count(reg_key(src))) continue;
            done.insert(reg_key(src));
            add_select(b, src, b.flat, false, order);
          }
        }
      }
      continue;
    }

    // explicit selections for this branch
    auto ex = policy.explicit_selects.find(b.addr);
    std::vector<Operand> targets;
    if (ex != policy.explicit_selects.end())
      for (RegisterId r : ex->second) targets.push_back(Operand::make_reg(r));

    // taint-guided selections
    std::vector<std::pair<Operand, size_t>> intro_points;  // target, step idx
    if (policy.taint_guided && b.step < steps.size()) {
      // (a) registers secret-effective at the branch and read afterwards
      std::vector<bool> at_b = eff[b.step];
      std::set<int> overwritten;
      for (size_t si = b.step + 1; si < steps.size(); ++si) {
        const ConcreteStep& cs = steps[si];
        for (RegisterId rr : cs.reads) {
          int slot = int_reg_slot(rr);
          if (at_b[slot] && !overwritten.count(slot))
            targets.push_back(Operand::make_reg(rr));
        }
        if (cs.wreg) overwritten.insert(int_reg_slot(*cs.wreg));
      }
      // (b) fresh secret introductions on the fall-through path
      for (size_t si = b.step + 1; si < steps.size(); ++si) {
        const ConcreteStep& cs = steps[si];
        if (cs.secret_from_location && cs.wreg &&
            !in_region(loops, cs.addr)) {
          intro_points.emplace_back(Operand::make_reg(*cs.wreg), si);
        }
      }
    }

    // place (a)/explicit selects: after the last def before the first use,
    // else before the first use, else right after the branch
    std::set<std::string> placed;
    for (const Operand& tgt : targets) {
      std::string key = reg_key(tgt);
      if (placed.count(key)) continue;
      placed.insert(key);
      std::optional<size_t> first_use, last_def;
      for (size_t i = b.flat + 1; i < items.size(); ++i) {
        if (items[i].k == FlatItem::K::Seqw &&
            (items[i].seqw.kind == SeqKind::Uend0 ||
             items[i].seqw.kind == SeqKind::Uend2))
          break;
        if (items[i].k != FlatItem::K::Uop) continue;
        const MicroOp& u = items[i].uop;
        bool used = false;
        for (const Operand& s : u.srcs)
          if (same_reg_operand(s, tgt)) used = true;
        if (used && !first_use) {
          first_use = i;
          break;
        }
        if (auto w = uop_reg_write(u)) {
          Operand wo = Operand::make_reg(*w);
          if (same_reg_operand(wo, tgt)) last_def = i;
        }
        if (u.dst && same_reg_operand(*u.dst, tgt)) last_def = i;
      }
      if (last_def)
        add_select(b, tgt, *last_def, false, order);
      else if (first_use)
        add_select(b, tgt, *first_use, true, order);
      else
        add_select(b, tgt, b.flat, false, order);
    }

    // (b) introductions: select right after the introducing uop
    for (const auto& [tgt, si] : intro_points)
      add_select(b, tgt, steps[si].flat_idx, false, order);
  }

  // build the new flat list
  struct Insertion {
    size_t pos;      // insert before items[pos]
    int order;
    MicroOp uop;
  };
  std::vector<Insertion> ins;
  for (const auto& [bflat, m] : materialize)
    ins.push_back({bflat + 1, -1, m});
  for (const auto& ps : plan) {
    MicroOp sel;
    sel.op = Opcode::Select;
    sel.cc = select_cc.at(ps.branch_flat);
    sel.dst = ps.target;
    sel.srcs = {select_cond.at(ps.branch_flat), ps.target};
    size_t pos = ps.before ? ps.insert_after : ps.insert_after + 1;
    ins.push_back({pos, ps.order, sel});
  }
  std::stable_sort(ins.begin(), ins.end(),
                   [](const Insertion& a, const Insertion& b) {
                     if (a.pos != b.pos) return a.pos < b.pos;
                     return a.order < b.order;
                   });

  std::vector<FlatItem> out;
  size_t k = 0;
  for (size_t i = 0; i <= items.size(); ++i) {
    while (k < ins.size() && ins[k].pos == i) {
      FlatItem it;
      it.k = FlatItem::K::Uop;
      it.uop = ins[k].uop;
      out.push_back(it);
      ++k;
    }
    if (i < items.size()) out.push_back(items[i]);
  }

  Microprogram hp = rebuild(p.name, out);

  // repacking may move uops between triads; unconditional branches must not
  // change their position-dependent prediction category
  std::vector<std::pair<bool, bool>> cats_before, cats_after;  // (last, exists)
  auto collect = [](const Microprogram& q) {
    std::vector<std::pair<bool, bool>> v;
    for (uint32_t a = 0; a < q.size(); ++a) {
      const MicroOp& u = q.at(a);
      if (!u.pad && u.is_branch() && !u.is_cond_branch())
        v.emplace_back(triad_position(a) == TriadPos::Last,
                       u.is_indirect_branch());
    }
    return v;
  };
  cats_before = collect(p);
  cats_after = collect(hp);
  if (cats_before.size() != cats_after.size())
    throw HardenError(p.name + ": hardening changed unconditional branch count");
  for (size_t i = 0; i < cats_before.size(); ++i)
    if (cats_before[i] != cats_after[i])
      throw HardenError(
          p.name +
          ": hardening would change an unconditional branch's prediction "
          "category (triad position)");
  return hp;
}

OverheadReport overhead(const Microprogram& p, const Microprogram& hp) {
  OverheadReport r;
  r.uops_before = p.real_uop_count();
  r.uops_after = hp.real_uop_count();
  auto loops_b = find_loops(p);
  auto loops_a = find_loops(hp);
  auto count = [](const Microprogram& q, const LoopRegion& reg) {
    int n = 0;
    for (uint32_t a = reg.lo; a <= reg.hi && a < q.size(); ++a)
      if (!q.at(a).pad) ++n;
    return n;
  };
  for (const auto& lb : loops_b) {
    LoopDelta d;
    d.label = lb.label;
    d.uops_before = count(p, lb);
    d.uops_after = d.uops_before;
    for (const auto& la : loops_a)
      if (la.label == lb.label) d.uops_after = count(hp, la);
    r.loops.push_back(std::move(d));
  }
  return r;
}

}  // namespace ucsim
