// ucsim: micro-op ISA definitions
//
// Registers, flags, condition codes, micro-ops, triads, sequence words and
// the microprogram container shared by the assembler, machine and pipeline.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ucsim {

// ---------------------------------------------------------------- registers

enum class RegClass : uint8_t { IntArch, IntTmp, FpArch, FpTmp };

struct RegisterId {
  RegClass cls = RegClass::IntTmp;
  uint8_t index = 0;
  auto operator<=>(const RegisterId&) const = default;
};

inline constexpr int kIntArchRegs = 16;
inline constexpr int kIntTmpRegs = 16;
inline constexpr int kIntRegs = kIntArchRegs + kIntTmpRegs;

// Flat index into the integer register file; FP registers exist but carry no
// execution semantics.
int int_reg_slot(RegisterId r);
bool is_int_reg(RegisterId r);

std::string reg_name(RegisterId r);

// Sub-width views (eax, cx, al, ...) resolve to the containing 64-bit
// register plus a width. 32-bit writes zero the upper half.
enum class Width : uint8_t { W8 = 1, W16 = 2, W32 = 4, W64 = 8 };

struct RegRef {
  RegisterId reg;
  Width width = Width::W64;
  auto operator<=>(const RegRef&) const = default;
};
std::optional<RegRef> reg_from_name(std::string_view name);

// -------------------------------------------------------------------- flags

struct FlagSet {
  bool zf = false, cf = false, of = false, sf = false, pf = false, af = false;
  bool operator==(const FlagSet&) const = default;
};

enum class CondCode : uint8_t { Z, NZ, C, NC, O, NO, L, GE, G, LE, BE, A };
inline constexpr int kNumCondCodes = 12;

bool eval_cond(CondCode cc, const FlagSet& f);
CondCode invert_cond(CondCode cc);
const char* cond_name(CondCode cc);
std::optional<CondCode> cond_from_name(std::string_view s);

// ------------------------------------------------- model bus/register map
//
// Control-register bus addresses are abstract model addresses except for the
// performance-counter array, which the microprograms address directly.

inline constexpr uint16_t kCregRflags = 0x0030;
inline constexpr uint16_t kCregCr4 = 0x0031;
inline constexpr uint16_t kCregPmcBase = 0x2260;
inline constexpr uint16_t kUramXcr0 = 0x005b;

// RFLAGS bit positions
inline constexpr int kRflagsCf = 0, kRflagsPf = 2, kRflagsAf = 4,
                     kRflagsZf = 6, kRflagsSf = 7, kRflagsDf = 10,
                     kRflagsOf = 11;
// CR4 bit positions
inline constexpr int kCr4Pce = 8, kCr4Fsgsbase = 16, kCr4Osxsave = 18;

// ------------------------------------------------------------------- triads

enum class TriadPos : uint8_t { First, Second, Last };

inline TriadPos triad_position(uint32_t uaddr) {
  return static_cast<TriadPos>(uaddr % 3);
}

// ------------------------------------------------------------------ opcodes

enum class Opcode : uint8_t {
  Nop,
  Unk109,   // reads DF into destination flags
  Unk256,   // serializing no-op
  Add8,     // 8-bit add, upper byte taken from second operand
  Add32,
  Add64,
  Sub32,
  Sub64,
  AddSub64, // +/- second operand depending on DF
  Or32,
  Or64,
  And32,
  And64,
  Notand32, // ~a & b
  Xor64,
  Rol32,
  Shr32,
  Shr64,
  ShrDsz64,
  Shl64,
  ZeroExt32,
  ZeroExt64,
  ZeroExtN, // width from the destination operand binding
  Move64,
  MoveMergeFlags32, // imm into data, flags unpacked from RFLAGS
  GenArithFlags,    // regenerate flags of a register from its data
  Select,           // dst = cc(src0.flags) ? src1 : 0
  SigEvent,         // raise pending event at retirement when code != 0
  RdCreg64,
  WrCreg64,
  BtsWrCreg64, // set bit, write to control register
  RdUram64,
  WrUram64,
  RdSeg,
  Ld32,
  Ld64,
  LdZx, // zero-extending load, width from binding
  St8,
  St32,
  St64,
  La2Lin32, // logical-to-linear address (flat segmentation)
  Udiv64,
  Urem64,
  Udiv128, // (hi:lo) / d, quotient mod 2^64
  Urem128,
  Sfence,
  Lfence, // macro-level drain: younger uops are not issued until it completes
  Cflush,
  Ujmp,      // unconditional, direct or indirect
  UjmpCc,    // conditional on the condition register's flags
  CmpUjmpCc, // compare with imm, update flags, then branch
  BtUjmpCc,  // bit-test, update carry, then branch
};

const char* opcode_name(Opcode op);

// ----------------------------------------------------------------- operands

enum class SegReg : uint8_t { FS, GS, DS };

struct Operand {
  enum class Kind : uint8_t { Reg, Imm, Slot, Seg, Label };
  Kind kind = Kind::Imm;
  RegRef reg{};           // Kind::Reg
  uint64_t imm = 0;       // Kind::Imm / resolved Kind::Label
  std::string name;       // Slot token, Label name, or named immediate
  SegReg seg = SegReg::FS;

  bool operator==(const Operand&) const = default;

  static Operand make_reg(RegisterId r, Width w = Width::W64);
  static Operand make_imm(uint64_t v, std::string name = "");
  static Operand make_slot(std::string token);
  static Operand make_seg(SegReg s);
  static Operand make_label(std::string l);
};

// ---------------------------------------------------------------- micro-ops

struct MicroOp {
  Opcode op = Opcode::Nop;
  std::optional<Operand> dst;
  std::vector<Operand> srcs;
  std::optional<CondCode> cc;     // branches and Select
  std::optional<Operand> target;  // branches: Label (direct) or Reg (indirect)
  bool pad = false;               // assembler padding; occupies a slot, never issues

  bool operator==(const MicroOp&) const = default;

  bool is_branch() const {
    return op == Opcode::Ujmp || op == Opcode::UjmpCc ||
           op == Opcode::CmpUjmpCc || op == Opcode::BtUjmpCc;
  }
  bool is_cond_branch() const { return is_branch() && op != Opcode::Ujmp; }
  bool is_indirect_branch() const {
    return is_branch() && target && target->kind == Operand::Kind::Reg;
  }
  bool is_load() const {
    return op == Opcode::Ld32 || op == Opcode::Ld64 || op == Opcode::LdZx;
  }
  bool is_store() const {
    return op == Opcode::St8 || op == Opcode::St32 || op == Opcode::St64;
  }
  bool is_mem_access() const { return is_load() || is_store(); }
  bool is_creg_access() const {
    return op == Opcode::RdCreg64 || op == Opcode::WrCreg64 ||
           op == Opcode::BtsWrCreg64;
  }
  bool is_uram_access() const {
    return op == Opcode::RdUram64 || op == Opcode::WrUram64;
  }

  static MicroOp nop(bool pad = false);
};

std::string uop_to_string(const MicroOp& u);

// ----------------------------------------------------------- sequence words

enum class SeqKind : uint8_t {
  None,
  Uend0,
  Uend2, // treated identically to Uend0
  LfnceMark,
  LfnceWait,
  SyncMark,
  SyncWait,
  SyncFull,
  Goto,
};

struct SeqDirective {
  SeqKind kind = SeqKind::None;
  uint32_t target = 0;     // Goto
  std::string label;       // Goto, symbolic
  bool operator==(const SeqDirective&) const = default;
};

const char* seq_name(SeqKind k);

struct Triad {
  std::array<MicroOp, 3> uops{MicroOp::nop(true), MicroOp::nop(true),
                              MicroOp::nop(true)};
  SeqDirective seqw;
  bool operator==(const Triad&) const = default;
};

// ------------------------------------------------------------- microprogram

struct Microprogram {
  std::string name;
  uint32_t entry = 0;
  std::vector<Triad> triads;                // uaddr = triad_index*3 + slot
  std::map<std::string, uint32_t> labels;   // label -> uaddr

  uint32_t size() const { return static_cast<uint32_t>(triads.size()) * 3; }
  const MicroOp& at(uint32_t uaddr) const {
    return triads[uaddr / 3].uops[uaddr % 3];
  }
  MicroOp& at(uint32_t uaddr) { return triads[uaddr / 3].uops[uaddr % 3]; }
  const SeqDirective& seqw_at(uint32_t uaddr) const {
    return triads[uaddr / 3].seqw;
  }
  int real_uop_count() const;
  std::vector<std::string> labels_at(uint32_t uaddr) const;

  // Throws ValidationError if the entrypoint or any branch/goto target does
  // not resolve to a held triad-aligned address.
  void validate() const;

  bool operator==(const Microprogram&) const = default;
};

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ucsim
