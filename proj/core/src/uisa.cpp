#include "ucsim/uisa.hpp"

#include <cassert>
#include <sstream>
#include <stdexcept>

namespace ucsim {

int int_reg_slot(RegisterId r) {
  switch (r.cls) {
    case RegClass::IntArch: return r.index;
    case RegClass::IntTmp: return kIntArchRegs + r.index;
    default: return -1;
  }
}

bool is_int_reg(RegisterId r) {
  return r.cls == RegClass::IntArch || r.cls == RegClass::IntTmp;
}

namespace {

const char* kArch64[] = {"rax", "rcx", "rdx", "rbx", "rsp", "rbp",
                         "rsi", "rdi", "r8",  "r9",  "r10", "r11",
                         "r12", "r13", "r14", "r15"};
const char* kArch32[] = {"eax", "ecx", "edx", "ebx", "esp", "ebp",
                         "esi", "edi", "r8d", "r9d", "r10d", "r11d",
                         "r12d", "r13d", "r14d", "r15d"};
const char* kArch16[] = {"ax", "cx", "dx", "bx", "sp", "bp", "si", "di",
                         "r8w", "r9w", "r10w", "r11w", "r12w", "r13w",
                         "r14w", "r15w"};
const char* kArch8[] = {"al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil",
                        "r8b", "r9b", "r10b", "r11b", "r12b", "r13b",
                        "r14b", "r15b"};

}  // namespace

std::string reg_name(RegisterId r) {
  switch (r.cls) {
    case RegClass::IntArch: return kArch64[r.index];
    case RegClass::IntTmp: return "tmp" + std::to_string(r.index);
    case RegClass::FpArch: return "xmm" + std::to_string(r.index);
    case RegClass::FpTmp: return "tmm" + std::to_string(r.index);
  }
  return "?";
}

std::optional<RegRef> reg_from_name(std::string_view name) {
  std::string s(name);
  for (auto& c : s) c = static_cast<char>(tolower(c));
  for (int i = 0; i < kIntArchRegs; ++i) {
    RegisterId id{RegClass::IntArch, static_cast<uint8_t>(i)};
    if (s == kArch64[i]) return RegRef{id, Width::W64};
    if (s == kArch32[i]) return RegRef{id, Width::W32};
    if (s == kArch16[i]) return RegRef{id, Width::W16};
    if (s == kArch8[i]) return RegRef{id, Width::W8};
  }
  auto numbered = [&](std::string_view prefix,
                      RegClass cls) -> std::optional<RegRef> {
    if (s.size() <= prefix.size() || s.compare(0, prefix.size(), prefix) != 0)
      return std::nullopt;
    int idx = 0;
    for (size_t i = prefix.size(); i < s.size(); ++i) {
      if (!isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
      idx = idx * 10 + (s[i] - '0');
    }
    if (idx > 15) return std::nullopt;
    return RegRef{RegisterId{cls, static_cast<uint8_t>(idx)}, Width::W64};
  };
  if (auto r = numbered("tmp", RegClass::IntTmp)) return r;
  if (auto r = numbered("xmm", RegClass::FpArch)) return r;
  if (auto r = numbered("tmm", RegClass::FpTmp)) return r;
  return std::nullopt;
}

bool eval_cond(CondCode cc, const FlagSet& f) {
  switch (cc) {
    case CondCode::Z: return f.zf;
    case CondCode::NZ: return !f.zf;
    case CondCode::C: return f.cf;
    case CondCode::NC: return !f.cf;
    case CondCode::O: return f.of;
    case CondCode::NO: return !f.of;
    case CondCode::L: return f.sf != f.of;
    case CondCode::GE: return f.sf == f.of;
    case CondCode::G: return !f.zf && f.sf == f.of;
    case CondCode::LE: return f.zf || f.sf != f.of;
    case CondCode::BE: return f.cf || f.zf;
    case CondCode::A: return !f.cf && !f.zf;
  }
  return false;
}

CondCode invert_cond(CondCode cc) {
  switch (cc) {
    case CondCode::Z: return CondCode::NZ;
    case CondCode::NZ: return CondCode::Z;
    case CondCode::C: return CondCode::NC;
    case CondCode::NC: return CondCode::C;
    case CondCode::O: return CondCode::NO;
    case CondCode::NO: return CondCode::O;
    case CondCode::L: return CondCode::GE;
    case CondCode::GE: return CondCode::L;
    case CondCode::G: return CondCode::LE;
    case CondCode::LE: return CondCode::G;
    case CondCode::BE: return CondCode::A;
    case CondCode::A: return CondCode::BE;
  }
  return cc;
}

const char* cond_name(CondCode cc) {
  switch (cc) {
    case CondCode::Z: return "Z";
    case CondCode::NZ: return "NZ";
    case CondCode::C: return "C";
    case CondCode::NC: return "NC";
    case CondCode::O: return "O";
    case CondCode::NO: return "NO";
    case CondCode::L: return "L";
    case CondCode::GE: return "GE";
    case CondCode::G: return "G";
    case CondCode::LE: return "LE";
    case CondCode::BE: return "BE";
    case CondCode::A: return "A";
  }
  return "?";
}

std::optional<CondCode> cond_from_name(std::string_view s) {
  std::string u(s);
  for (auto& c : u) c = static_cast<char>(toupper(c));
  for (int i = 0; i < kNumCondCodes; ++i) {
    auto cc = static_cast<CondCode>(i);
    if (u == cond_name(cc)) return cc;
  }
  return std::nullopt;
}

const char* opcode_name(Opcode op) {
  switch (op) {
    case Opcode::Nop: return "NOP";
    case Opcode::Unk109: return "unk_109";
    case Opcode::Unk256: return "unk_256";
    case Opcode::Add8: return "ADD8";
    case Opcode::Add32: return "ADD32";
    case Opcode::Add64: return "ADD64";
    case Opcode::Sub32: return "SUB32";
    case Opcode::Sub64: return "SUB64";
    case Opcode::AddSub64: return "ADDSUB64";
    case Opcode::Or32: return "OR32";
    case Opcode::Or64: return "OR64";
    case Opcode::And32: return "AND32";
    case Opcode::And64: return "AND64";
    case Opcode::Notand32: return "NOTAND32";
    case Opcode::Xor64: return "XOR64";
    case Opcode::Rol32: return "ROL32";
    case Opcode::Shr32: return "SHR32";
    case Opcode::Shr64: return "SHR64";
    case Opcode::ShrDsz64: return "SHR_DSZ64";
    case Opcode::Shl64: return "SHL64";
    case Opcode::ZeroExt32: return "ZEROEXT32";
    case Opcode::ZeroExt64: return "ZEROEXT64";
    case Opcode::ZeroExtN: return "ZEROEXTN";
    case Opcode::Move64: return "MOVE64";
    case Opcode::MoveMergeFlags32: return "MOVE_MERGEFLAGS32";
    case Opcode::GenArithFlags: return "GENARITHFLAGS";
    case Opcode::Select: return "SELECT";
    case Opcode::SigEvent: return "SIGEVENT";
    case Opcode::RdCreg64: return "RDCREG64";
    case Opcode::WrCreg64: return "WRCREG64";
    case Opcode::BtsWrCreg64: return "BTS_WRCREG64";
    case Opcode::RdUram64: return "READURAM64";
    case Opcode::WrUram64: return "WRURAM64";
    case Opcode::RdSeg: return "RDSEG";
    case Opcode::Ld32: return "LD32";
    case Opcode::Ld64: return "LD64";
    case Opcode::LdZx: return "LDZXn";
    case Opcode::St8: return "ST8";
    case Opcode::St32: return "ST32";
    case Opcode::St64: return "ST64";
    case Opcode::La2Lin32: return "LA2LIN32";
    case Opcode::Udiv64: return "UDIV64";
    case Opcode::Urem64: return "UREM64";
    case Opcode::Udiv128: return "UDIV128";
    case Opcode::Urem128: return "UREM128";
    case Opcode::Sfence: return "SFENCE";
    case Opcode::Lfence: return "LFENCE";
    case Opcode::Cflush: return "CFLUSH";
    case Opcode::Ujmp: return "UJMP";
    case Opcode::UjmpCc: return "UJMP";
    case Opcode::CmpUjmpCc: return "CMP_UJMP";
    case Opcode::BtUjmpCc: return "BT_UJMP";
  }
  return "?";
}

Operand Operand::make_reg(RegisterId r, Width w) {
  Operand o;
  o.kind = Kind::Reg;
  o.reg = RegRef{r, w};
  return o;
}
Operand Operand::make_imm(uint64_t v, std::string name) {
  Operand o;
  o.kind = Kind::Imm;
  o.imm = v;
  o.name = std::move(name);
  return o;
}
Operand Operand::make_slot(std::string token) {
  Operand o;
  o.kind = Kind::Slot;
  o.name = std::move(token);
  return o;
}
Operand Operand::make_seg(SegReg s) {
  Operand o;
  o.kind = Kind::Seg;
  o.seg = s;
  return o;
}
Operand Operand::make_label(std::string l) {
  Operand o;
  o.kind = Kind::Label;
  o.name = std::move(l);
  return o;
}

MicroOp MicroOp::nop(bool pad) {
  MicroOp u;
  u.op = Opcode::Nop;
  u.pad = pad;
  return u;
}

const char* seq_name(SeqKind k) {
  switch (k) {
    case SeqKind::None: return "NONE";
    case SeqKind::Uend0: return "UEND0";
    case SeqKind::Uend2: return "UEND2";
    case SeqKind::LfnceMark: return "LFNCEMARK";
    case SeqKind::LfnceWait: return "LFNCEWAIT";
    case SeqKind::SyncMark: return "SYNCMARK";
    case SeqKind::SyncWait: return "SYNCWAIT";
    case SeqKind::SyncFull: return "SYNCFULL";
    case SeqKind::Goto: return "GOTO";
  }
  return "?";
}

namespace {

std::string operand_str(const Operand& o) {
  switch (o.kind) {
    case Operand::Kind::Reg: {
      if (o.reg.width == Width::W64 || o.reg.reg.cls != RegClass::IntArch)
        return reg_name(o.reg.reg);
      // sub-width arch views
      int i = o.reg.reg.index;
      switch (o.reg.width) {
        case Width::W32: return kArch32[i];
        case Width::W16: return kArch16[i];
        case Width::W8: return kArch8[i];
        default: return kArch64[i];
      }
    }
    case Operand::Kind::Imm:
      if (!o.name.empty()) return o.name;
      if (o.imm < 10) return std::to_string(o.imm);
      {
        char buf[24];
        snprintf(buf, sizeof buf, "0x%llx",
                 static_cast<unsigned long long>(o.imm));
        return buf;
      }
    case Operand::Kind::Slot: return o.name;
    case Operand::Kind::Seg:
      return o.seg == SegReg::FS ? "FS" : o.seg == SegReg::GS ? "GS" : "DS";
    case Operand::Kind::Label: return o.name;
  }
  return "?";
}

}  // namespace

std::string uop_to_string(const MicroOp& u) {
  std::ostringstream os;
  if (u.op == Opcode::Nop) return "NOP";
  if (u.dst) os << operand_str(*u.dst) << " = ";
  os << opcode_name(u.op);
  if (u.cc) os << cond_name(*u.cc);
  os << "(";
  bool first = true;
  for (const auto& s : u.srcs) {
    if (!first) os << ", ";
    os << operand_str(s);
    first = false;
  }
  if (u.target) {
    if (!first) os << ", ";
    os << operand_str(*u.target);
  }
  os << ")";
  return os.str();
}

int Microprogram::real_uop_count() const {
  int n = 0;
  for (const auto& t : triads)
    for (const auto& u : t.uops)
      if (!u.pad) ++n;
  return n;
}

std::vector<std::string> Microprogram::labels_at(uint32_t uaddr) const {
  std::vector<std::string> out;
  for (const auto& [name, addr] : labels)
    if (addr == uaddr) out.push_back(name);
  return out;
}

void Microprogram::validate() const {
  if (triads.empty())
    throw ValidationError(name + ": unresolved-entrypoint: program is empty");
  auto check_target = [&](uint32_t addr, const std::string& what) {
    if (addr >= size() || addr % 3 != 0)
      throw ValidationError(name + ": " + what + " does not resolve to a held triad address");
  };
  check_target(entry, "entrypoint");
  for (uint32_t a = 0; a < size(); ++a) {
    const MicroOp& u = at(a);
    if (u.is_branch()) {
      if (!u.target)
        throw ValidationError(name + ": branch without target at " + std::to_string(a));
      if (u.target->kind == Operand::Kind::Label)
        check_target(static_cast<uint32_t>(u.target->imm),
                     "branch target '" + u.target->name + "'");
    }
  }
  for (const auto& t : triads)
    if (t.seqw.kind == SeqKind::Goto)
      check_target(t.seqw.target, "goto target '" + t.seqw.label + "'");
}

}  // namespace ucsim
