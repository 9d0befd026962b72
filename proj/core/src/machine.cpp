#include "ucsim/machine.hpp"

#include <algorithm>
#include <bit>
#include <sstream>

namespace ucsim {

// -------------------------------------------------------------------- taint

std::string TaintLabel::str() const {
  std::ostringstream os;
  switch (origin) {
    case Origin::Creg: os << "creg:0x" << std::hex << lo; break;
    case Origin::SegBase: os << (lo == 0 ? "segbase:FS" : "segbase:GS"); break;
    case Origin::Uram: os << "uram:0x" << std::hex << lo; break;
    case Origin::Memory:
      os << "mem:0x" << std::hex << lo << "-0x" << hi;
      break;
    case Origin::ArchReg:
      os << "reg:" << reg_name(RegisterId{RegClass::IntArch,
                                          static_cast<uint8_t>(lo)});
      break;
  }
  os << (secrecy == Secrecy::Secret ? "/secret" : "/public");
  return os.str();
}

uint16_t LabelRegistry::intern(const TaintLabel& l) {
  for (size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] == l) return static_cast<uint16_t>(i);
  labels_.push_back(l);
  return static_cast<uint16_t>(labels_.size() - 1);
}

void TaintSet::add(uint16_t id) {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) ids.insert(it, id);
}

void TaintSet::merge(const TaintSet& o) {
  for (uint16_t id : o.ids) add(id);
}

bool TaintSet::contains(uint16_t id) const {
  return std::binary_search(ids.begin(), ids.end(), id);
}

bool TaintSet::any_secret(const LabelRegistry& reg) const {
  for (uint16_t id : ids)
    if (reg.get(id).secrecy == Secrecy::Secret) return true;
  return false;
}

// -------------------------------------------------------------------- flags

uint64_t width_mask(Width w) {
  switch (w) {
    case Width::W8: return 0xFFull;
    case Width::W16: return 0xFFFFull;
    case Width::W32: return 0xFFFFFFFFull;
    case Width::W64: return ~0ull;
  }
  return ~0ull;
}

static int width_bits(Width w) { return static_cast<int>(w) * 8; }

FlagSet flags_logic(uint64_t v, Width w) {
  FlagSet f;
  uint64_t m = width_mask(w);
  v &= m;
  f.zf = v == 0;
  f.sf = (v >> (width_bits(w) - 1)) & 1;
  f.pf = (std::popcount(static_cast<unsigned>(v & 0xFF)) & 1) == 0;
  f.cf = false;
  f.of = false;
  f.af = false;
  return f;
}

FlagSet flags_add(uint64_t a, uint64_t b, Width w) {
  uint64_t m = width_mask(w);
  int bits = width_bits(w);
  uint64_t r = (a + b) & m;
  FlagSet f = flags_logic(r, w);
  f.cf = ((a & m) + (b & m)) > m;
  uint64_t sa = (a >> (bits - 1)) & 1, sb = (b >> (bits - 1)) & 1,
           sr = (r >> (bits - 1)) & 1;
  f.of = (sa == sb) && (sr != sa);
  f.af = (((a & 0xF) + (b & 0xF)) & 0x10) != 0;
  return f;
}

FlagSet flags_sub(uint64_t a, uint64_t b, Width w) {
  uint64_t m = width_mask(w);
  int bits = width_bits(w);
  uint64_t r = (a - b) & m;
  FlagSet f = flags_logic(r, w);
  f.cf = (a & m) < (b & m);
  uint64_t sa = (a >> (bits - 1)) & 1, sb = (b >> (bits - 1)) & 1,
           sr = (r >> (bits - 1)) & 1;
  f.of = (sa != sb) && (sr != sa);
  f.af = ((a & 0xF) < (b & 0xF));
  return f;
}

// -------------------------------------------------------------------- state

TaintedValue MachineState::read_creg(uint16_t addr) const {
  auto it = crbus.find(addr);
  if (it == crbus.end()) return TaintedValue{0, flags_logic(0, Width::W64), {}};
  return it->second;
}

void MachineState::write_creg(uint16_t addr, TaintedValue v) {
  crbus[addr] = std::move(v);
}

TaintedValue MachineState::read_uram(uint16_t addr) const {
  auto it = uram.find(addr);
  if (it == uram.end()) return TaintedValue{0, flags_logic(0, Width::W64), {}};
  return it->second;
}

void MachineState::write_uram(uint16_t addr, TaintedValue v) {
  uram[addr] = std::move(v);
}

TaintedValue MachineState::read_seg(SegReg s) const {
  if (s == SegReg::DS) return TaintedValue{0, flags_logic(0, Width::W64), {}};
  return segbase[s == SegReg::FS ? 0 : 1];
}

TaintedValue MachineState::read_mem(uint64_t addr, unsigned bytes) const {
  TaintedValue v;
  for (unsigned i = 0; i < bytes; ++i) {
    auto it = mem.find(addr + i);
    if (it == mem.end()) {
      if (fault_on_unmapped_mem)
        throw ExecError("unmapped-memory at 0x" + std::to_string(addr + i));
      continue;
    }
    v.data |= (it->second.data & 0xFF) << (8 * i);
    v.taint.merge(it->second.taint);
  }
  v.flags = flags_logic(v.data, Width::W64);
  return v;
}

void MachineState::write_mem(uint64_t addr, uint64_t data, unsigned bytes,
                             const TaintSet& taint) {
  for (unsigned i = 0; i < bytes; ++i) {
    TaintedValue b;
    b.data = (data >> (8 * i)) & 0xFF;
    b.taint = taint;
    b.flags = flags_logic(b.data, Width::W8);
    mem[addr + i] = std::move(b);
  }
}

// ---------------------------------------------------------------- execution

Operand resolve_operand(const Operand& o, const MacroBinding& bind) {
  if (o.kind != Operand::Kind::Slot) return o;
  auto it = bind.slots.find(o.name);
  if (it == bind.slots.end())
    throw ExecError("unbound macro operand slot '" + o.name + "'");
  return it->second;
}

namespace {

TaintedValue value_of(const Operand& o, const MacroBinding& bind,
                      ValueSource& vs) {
  Operand r = resolve_operand(o, bind);
  switch (r.kind) {
    case Operand::Kind::Reg: {
      TaintedValue v = vs.reg(r.reg.reg);
      v.data &= width_mask(r.reg.width);
      return v;
    }
    case Operand::Kind::Imm:
    case Operand::Kind::Label: {
      TaintedValue v;
      v.data = r.imm;
      v.flags = flags_logic(v.data, Width::W64);
      return v;
    }
    default:
      throw ExecError("operand is not a value");
  }
}

// Register writes honor sub-width views: 32-bit writes zero the upper half,
// 8/16-bit writes merge into the containing register.
WriteEffect reg_write(const Operand& dst_resolved, uint64_t data, FlagSet fl,
                      TaintSet taint, ValueSource& vs) {
  if (dst_resolved.kind != Operand::Kind::Reg)
    throw ExecError("destination is not a register");
  RegRef rr = dst_resolved.reg;
  uint64_t final_data = data & width_mask(rr.width);
  if (rr.width == Width::W8 || rr.width == Width::W16) {
    uint64_t old = vs.reg(rr.reg).data;
    final_data = (old & ~width_mask(rr.width)) | final_data;
  }
  WriteEffect e;
  e.target = WriteEffect::Target::Reg;
  e.reg = rr.reg;
  e.value = TaintedValue{final_data, fl, std::move(taint)};
  e.buffered = true;
  return e;
}

struct AddrResult {
  uint64_t addr;
  TaintSet taint;
};

// Address forms taken from the microprogram listings:
//   (base), (base, disp), (seg, base, disp), (seg, base, idx, scale, disp)
AddrResult mem_address(const std::vector<Operand>& srcs, size_t first,
                       size_t count, const MacroBinding& bind,
                       ValueSource& vs) {
  AddrResult out{0, {}};
  std::vector<Operand> ops;
  for (size_t i = first; i < first + count; ++i)
    ops.push_back(resolve_operand(srcs[i], bind));
  size_t i0 = 0;
  if (!ops.empty() && ops[0].kind == Operand::Kind::Seg) i0 = 1;  // flat
  size_t n = ops.size() - i0;
  auto val = [&](size_t k) {
    TaintedValue v = value_of(ops[i0 + k], bind, vs);
    out.taint.merge(v.taint);
    return v.data;
  };
  if (n == 1) {
    out.addr = val(0);
  } else if (n == 2) {
    out.addr = val(0) + val(1);
  } else if (n == 4) {
    out.addr = val(0) + val(1) * val(2) + val(3);
  } else {
    throw ExecError("malformed memory operand list");
  }
  return out;
}

Width width_from_slot(const MacroBinding& bind, const char* slot,
                      Width dflt) {
  auto it = bind.slots.find(slot);
  if (it == bind.slots.end()) return dflt;
  switch (it->second.imm) {
    case 1: return Width::W8;
    case 2: return Width::W16;
    case 4: return Width::W32;
    default: return Width::W64;
  }
}

}  // namespace

ExecResult exec_uop(const MicroOp& u, const MacroBinding& bind,
                    ValueSource& vs) {
  ExecResult res;
  auto src = [&](size_t i) { return value_of(u.srcs.at(i), bind, vs); };
  auto dst = [&]() { return resolve_operand(*u.dst, bind); };
  auto emit_reg = [&](uint64_t data, FlagSet fl, TaintSet taint) {
    res.effects.push_back(reg_write(dst(), data, fl, std::move(taint), vs));
  };
  auto taint2 = [](const TaintedValue& a, const TaintedValue& b) {
    TaintSet t = a.taint;
    t.merge(b.taint);
    return t;
  };

  switch (u.op) {
    case Opcode::Nop:
    case Opcode::Unk256:
    case Opcode::Sfence:
      break;

    case Opcode::Lfence:
      res.lat = LatClass::Barrier;
      break;

    case Opcode::Unk109: {
      // reads DF into the destination's flags (carry = DF, zero = !DF)
      TaintedValue rf = vs.creg(kCregRflags);
      TaintedValue a = src(0);
      bool df = (rf.data >> kRflagsDf) & 1;
      FlagSet fl = flags_logic(a.data, Width::W64);
      fl.cf = df;
      fl.zf = !df;
      emit_reg(a.data, fl, taint2(a, rf));
      break;
    }

    case Opcode::Add8: {
      TaintedValue a = src(0), b = src(1);
      uint64_t r = ((a.data + b.data) & 0xFF) | (b.data & 0xFF00);
      FlagSet fl = flags_logic(r, Width::W16);
      fl.cf = ((a.data & 0xFF) + (b.data & 0xFF)) > 0xFF;
      fl.af = (((a.data & 0xF) + (b.data & 0xF)) & 0x10) != 0;
      emit_reg(r, fl, taint2(a, b));
      break;
    }

    case Opcode::Add32:
    case Opcode::Add64: {
      Width w = u.op == Opcode::Add32 ? Width::W32 : Width::W64;
      TaintedValue a = src(0), b = src(1);
      uint64_t r = (a.data + b.data) & width_mask(w);
      emit_reg(r, flags_add(a.data, b.data, w), taint2(a, b));
      break;
    }

    case Opcode::Sub32:
    case Opcode::Sub64: {
      Width w = u.op == Opcode::Sub32 ? Width::W32 : Width::W64;
      TaintedValue a = src(0), b = src(1);
      uint64_t r = (a.data - b.data) & width_mask(w);
      emit_reg(r, flags_sub(a.data, b.data, w), taint2(a, b));
      break;
    }

    case Opcode::AddSub64: {
      // increment or decrement depending on DF
      TaintedValue a = src(0), b = src(1);
      TaintedValue rf = vs.creg(kCregRflags);
      bool df = (rf.data >> kRflagsDf) & 1;
      uint64_t r = df ? a.data - b.data : a.data + b.data;
      FlagSet fl = df ? flags_sub(a.data, b.data, Width::W64)
                      : flags_add(a.data, b.data, Width::W64);
      TaintSet t = taint2(a, b);
      t.merge(rf.taint);
      emit_reg(r, fl, std::move(t));
      break;
    }

    case Opcode::Or32:
    case Opcode::Or64: {
      Width w = u.op == Opcode::Or32 ? Width::W32 : Width::W64;
      TaintedValue a = src(0);
      TaintedValue b = u.srcs.size() > 1 ? src(1) : a;
      uint64_t r = (a.data | b.data) & width_mask(w);
      emit_reg(r, flags_logic(r, w), taint2(a, b));
      break;
    }

    case Opcode::And32:
    case Opcode::And64: {
      Width w = u.op == Opcode::And32 ? Width::W32 : Width::W64;
      TaintedValue a = src(0), b = src(1);
      uint64_t r = (a.data & b.data) & width_mask(w);
      emit_reg(r, flags_logic(r, w), taint2(a, b));
      break;
    }

    case Opcode::Notand32: {
      TaintedValue a = src(0), b = src(1);
      uint64_t r = (~a.data & b.data) & 0xFFFFFFFFull;
      emit_reg(r, flags_logic(r, Width::W32), taint2(a, b));
      break;
    }

    case Opcode::Xor64: {
      TaintedValue a = src(0), b = src(1);
      uint64_t r = a.data ^ b.data;
      emit_reg(r, flags_logic(r, Width::W64), taint2(a, b));
      break;
    }

    case Opcode::Rol32: {
      TaintedValue a = src(0), b = src(1);
      unsigned c = b.data & 31;
      uint32_t v = static_cast<uint32_t>(a.data);
      uint32_t r = c ? (v << c) | (v >> (32 - c)) : v;
      FlagSet fl = flags_logic(r, Width::W32);
      fl.cf = r & 1;
      emit_reg(r, fl, taint2(a, b));
      break;
    }

    case Opcode::Shr32:
    case Opcode::Shr64:
    case Opcode::ShrDsz64: {
      Width w = u.op == Opcode::Shr32 ? Width::W32 : Width::W64;
      TaintedValue a = src(0), b = src(1);
      unsigned bits = w == Width::W32 ? 32 : 64;
      unsigned c = b.data & (bits - 1);
      uint64_t v = a.data & width_mask(w);
      uint64_t r = c ? v >> c : v;
      FlagSet fl = flags_logic(r, w);
      if (c) fl.cf = (v >> (c - 1)) & 1;
      emit_reg(r, fl, taint2(a, b));
      break;
    }

    case Opcode::Shl64: {
      TaintedValue a = src(0), b = src(1);
      unsigned c = b.data & 63;
      uint64_t r = c ? a.data << c : a.data;
      FlagSet fl = flags_logic(r, Width::W64);
      if (c) fl.cf = (a.data >> (64 - c)) & 1;
      emit_reg(r, fl, taint2(a, b));
      break;
    }

    case Opcode::ZeroExt32: {
      TaintedValue a = src(0);
      uint64_t r = a.data & 0xFFFFFFFFull;
      emit_reg(r, flags_logic(r, Width::W32), a.taint);
      break;
    }

    case Opcode::ZeroExt64: {
      TaintedValue a = src(0);  // extra sources are merge hints; value is src0
      emit_reg(a.data, flags_logic(a.data, Width::W64), a.taint);
      break;
    }

    case Opcode::ZeroExtN: {
      TaintedValue a = src(0);
      Width w = dst().kind == Operand::Kind::Reg ? dst().reg.width : Width::W64;
      uint64_t r = a.data & width_mask(w);
      emit_reg(r, flags_logic(r, w), a.taint);
      break;
    }

    case Opcode::Move64: {
      TaintedValue a = src(0);
      emit_reg(a.data, flags_logic(a.data, Width::W64), a.taint);
      break;
    }

    case Opcode::MoveMergeFlags32: {
      TaintedValue a = src(0);
      TaintedValue rf = vs.creg(kCregRflags);
      FlagSet fl;
      fl.cf = (rf.data >> kRflagsCf) & 1;
      fl.pf = (rf.data >> kRflagsPf) & 1;
      fl.af = (rf.data >> kRflagsAf) & 1;
      fl.zf = (rf.data >> kRflagsZf) & 1;
      fl.sf = (rf.data >> kRflagsSf) & 1;
      fl.of = (rf.data >> kRflagsOf) & 1;
      emit_reg(a.data, fl, taint2(a, rf));
      res.lat = LatClass::Creg;
      break;
    }

    case Opcode::GenArithFlags: {
      // regenerate all six flags of the register operand from its data
      Operand r = resolve_operand(u.srcs.at(1), bind);
      TaintedValue v = value_of(u.srcs.at(1), bind, vs);
      res.effects.push_back(
          reg_write(r, v.data, flags_logic(v.data, Width::W64), v.taint, vs));
      break;
    }

    case Opcode::Select: {
      TaintedValue cond = src(0);
      bool takeit = eval_cond(*u.cc, cond.flags);
      // the untaken arm is not read; the result then reveals only the
      // predicate, which is what makes select-based hardening clean
      TaintedValue picked;
      if (takeit) picked = src(1);
      TaintSet t = cond.taint;
      t.merge(picked.taint);
      uint64_t r = takeit ? picked.data : 0;
      emit_reg(r, flags_logic(r, Width::W64), std::move(t));
      break;
    }

    case Opcode::SigEvent: {
      TaintedValue code = src(0);
      res.event_code = code.data;
      break;
    }

    case Opcode::RdCreg64: {
      TaintedValue addr = src(0);
      TaintedValue v = vs.creg(static_cast<uint16_t>(addr.data));
      TaintSet t = taint2(v, addr);
      emit_reg(v.data, flags_logic(v.data, Width::W64), std::move(t));
      res.lat = LatClass::Creg;
      break;
    }

    case Opcode::WrCreg64: {
      TaintedValue v = src(0), addr = src(1);
      WriteEffect e;
      e.target = WriteEffect::Target::Creg;
      e.addr = addr.data & 0xFFFF;
      e.value = TaintedValue{v.data, v.flags, taint2(v, addr)};
      e.buffered = false;
      res.effects.push_back(std::move(e));
      res.lat = LatClass::Creg;
      break;
    }

    case Opcode::BtsWrCreg64: {
      TaintedValue v = src(0), bit = src(1), addr = src(2);
      WriteEffect e;
      e.target = WriteEffect::Target::Creg;
      e.addr = addr.data & 0xFFFF;
      uint64_t r = v.data | (1ull << (bit.data & 63));
      e.value = TaintedValue{r, flags_logic(r, Width::W64), taint2(v, addr)};
      e.buffered = false;
      res.effects.push_back(std::move(e));
      res.lat = LatClass::Creg;
      break;
    }

    case Opcode::RdUram64: {
      TaintedValue addr = src(0);
      TaintedValue v = vs.uram(static_cast<uint16_t>(addr.data));
      emit_reg(v.data, flags_logic(v.data, Width::W64), taint2(v, addr));
      res.lat = LatClass::Uram;
      break;
    }

    case Opcode::WrUram64: {
      TaintedValue v = src(0), addr = src(1);
      WriteEffect e;
      e.target = WriteEffect::Target::Uram;
      e.addr = addr.data & 0xFFFF;
      e.value = TaintedValue{v.data, v.flags, taint2(v, addr)};
      e.buffered = false;
      res.effects.push_back(std::move(e));
      res.lat = LatClass::Uram;
      break;
    }

    case Opcode::RdSeg: {
      Operand s = resolve_operand(u.srcs.at(0), bind);
      if (s.kind != Operand::Kind::Seg)
        throw ExecError("RDSEG expects a segment operand");
      TaintedValue v = vs.seg(s.seg);
      emit_reg(v.data, flags_logic(v.data, Width::W64), v.taint);
      res.lat = LatClass::Seg;
      break;
    }

    case Opcode::Ld32:
    case Opcode::Ld64:
    case Opcode::LdZx: {
      unsigned bytes = u.op == Opcode::Ld32 ? 4
                       : u.op == Opcode::Ld64
                           ? 8
                           : static_cast<unsigned>(
                                 width_from_slot(bind, "n", Width::W8));
      AddrResult ar = mem_address(u.srcs, 0, u.srcs.size(), bind, vs);
      TaintedValue v = vs.mem(ar.addr, bytes);
      TaintSet t = v.taint;
      t.merge(ar.taint);
      emit_reg(v.data, flags_logic(v.data, Width::W64), std::move(t));
      res.mem = MemRef{ar.addr, bytes, false, false, ar.taint};
      res.lat = LatClass::Load;
      break;
    }

    case Opcode::St8:
    case Opcode::St32:
    case Opcode::St64: {
      unsigned bytes = u.op == Opcode::St8 ? 1 : u.op == Opcode::St32 ? 4 : 8;
      TaintedValue v = src(0);
      AddrResult ar = mem_address(u.srcs, 1, u.srcs.size() - 1, bind, vs);
      WriteEffect e;
      e.target = WriteEffect::Target::Mem;
      e.addr = ar.addr;
      e.bytes = bytes;
      TaintSet t = v.taint;
      t.merge(ar.taint);
      e.value = TaintedValue{v.data & width_mask(static_cast<Width>(bytes)),
                             v.flags, std::move(t)};
      e.buffered = true;
      res.effects.push_back(std::move(e));
      res.mem = MemRef{ar.addr, bytes, true, false, ar.taint};
      break;
    }

    case Opcode::La2Lin32: {
      AddrResult ar = mem_address(u.srcs, 0, u.srcs.size(), bind, vs);
      uint64_t r = ar.addr & 0xFFFFFFFFull;
      emit_reg(r, flags_logic(r, Width::W32), ar.taint);
      break;
    }

    case Opcode::Udiv64:
    case Opcode::Urem64: {
      TaintedValue a = src(0), b = src(1);
      uint64_t r = 0;
      if (b.data != 0)
        r = u.op == Opcode::Udiv64 ? a.data / b.data : a.data % b.data;
      emit_reg(r, flags_logic(r, Width::W64), taint2(a, b));
      res.lat = LatClass::Div;
      break;
    }

    case Opcode::Udiv128:
    case Opcode::Urem128: {
      TaintedValue hi = src(0), lo = src(1), d = src(2);
      uint64_t r = 0;
      if (d.data != 0) {
        unsigned __int128 n =
            (static_cast<unsigned __int128>(hi.data) << 64) | lo.data;
        unsigned __int128 q =
            u.op == Opcode::Udiv128 ? n / d.data : n % d.data;
        r = static_cast<uint64_t>(q);
      }
      TaintSet t = taint2(hi, lo);
      t.merge(d.taint);
      emit_reg(r, flags_logic(r, Width::W64), std::move(t));
      res.lat = LatClass::Div;
      break;
    }

    case Opcode::Cflush: {
      AddrResult ar = mem_address(u.srcs, 0, u.srcs.size(), bind, vs);
      res.mem = MemRef{ar.addr, 1, false, true, ar.taint};
      break;
    }

    case Opcode::Ujmp:
    case Opcode::UjmpCc:
    case Opcode::CmpUjmpCc:
    case Opcode::BtUjmpCc: {
      BranchRes br;
      if (u.op == Opcode::Ujmp) {
        br.taken = true;
      } else if (u.op == Opcode::UjmpCc) {
        TaintedValue cond = src(0);
        br.taken = eval_cond(*u.cc, cond.flags);
      } else if (u.op == Opcode::CmpUjmpCc) {
        Operand r = resolve_operand(u.srcs.at(0), bind);
        TaintedValue a = src(0), b = src(1);
        FlagSet fl = flags_sub(a.data, b.data, Width::W64);
        TaintSet t = taint2(a, b);
        res.effects.push_back(reg_write(r, a.data, fl, std::move(t), vs));
        br.taken = eval_cond(*u.cc, fl);
      } else {  // BtUjmpCc
        Operand r = resolve_operand(u.srcs.at(0), bind);
        TaintedValue a = src(0), bit = src(1);
        FlagSet fl = a.flags;
        fl.cf = (a.data >> (bit.data & 63)) & 1;
        res.effects.push_back(reg_write(r, a.data, fl, taint2(a, bit), vs));
        br.taken = eval_cond(*u.cc, fl);
      }
      Operand t = resolve_operand(*u.target, bind);
      if (t.kind == Operand::Kind::Reg)
        br.target = static_cast<uint32_t>(vs.reg(t.reg.reg).data);
      else
        br.target = static_cast<uint32_t>(t.imm);
      res.branch = br;
      break;
    }
  }
  return res;
}

}  // namespace ucsim
