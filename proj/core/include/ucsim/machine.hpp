// ucsim: machine state and micro-op execution semantics
//
// Every value carries a taint-label set. Control-register and micro-RAM
// writes are unbuffered (they persist through squash); register and memory
// writes are buffered effects that the caller commits or discards.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ucsim/uisa.hpp"

namespace ucsim {

// -------------------------------------------------------------------- taint

enum class Secrecy : uint8_t { Public, Secret };

struct TaintLabel {
  enum class Origin : uint8_t { Creg, SegBase, Uram, Memory, ArchReg };
  Origin origin = Origin::Memory;
  uint64_t lo = 0, hi = 0;  // address, or [lo, hi) for memory ranges
  Secrecy secrecy = Secrecy::Public;
  std::string str() const;
  bool operator==(const TaintLabel&) const = default;
};

class LabelRegistry {
 public:
  uint16_t intern(const TaintLabel& l);
  const TaintLabel& get(uint16_t id) const { return labels_.at(id); }
  size_t size() const { return labels_.size(); }

 private:
  std::vector<TaintLabel> labels_;
};

struct TaintSet {
  std::vector<uint16_t> ids;  // sorted, unique

  void add(uint16_t id);
  void merge(const TaintSet& o);
  bool contains(uint16_t id) const;
  bool empty() const { return ids.empty(); }
  bool any_secret(const LabelRegistry& reg) const;
  bool operator==(const TaintSet&) const = default;
};

struct TaintedValue {
  uint64_t data = 0;
  FlagSet flags{};
  TaintSet taint{};
};

// -------------------------------------------------------------------- state

struct PendingEvent {
  uint64_t code = 0;
  std::string name;
};

struct MachineState {
  std::array<TaintedValue, kIntRegs> iregs{};
  std::map<uint16_t, TaintedValue> crbus;
  std::map<uint16_t, TaintedValue> uram;
  std::array<TaintedValue, 2> segbase{};  // FS, GS
  std::map<uint64_t, TaintedValue> mem;   // byte-addressable, sparse
  std::optional<PendingEvent> pending_event;
  bool fault_on_unmapped_mem = false;

  TaintedValue& reg(RegisterId r) { return iregs[int_reg_slot(r)]; }
  const TaintedValue& reg(RegisterId r) const { return iregs[int_reg_slot(r)]; }

  TaintedValue read_creg(uint16_t addr) const;
  void write_creg(uint16_t addr, TaintedValue v);
  TaintedValue read_uram(uint16_t addr) const;
  void write_uram(uint16_t addr, TaintedValue v);
  TaintedValue read_seg(SegReg s) const;
  TaintedValue read_mem(uint64_t addr, unsigned bytes) const;
  void write_mem(uint64_t addr, uint64_t data, unsigned bytes,
                 const TaintSet& taint);

  bool creg_bit(uint16_t addr, int bit) const {
    return (read_creg(addr).data >> bit) & 1;
  }
};

// ----------------------------------------------------------------- bindings

// Decode-time bindings of a macro-op's operand slots ("r64", "m32base", ...)
// to concrete operands, plus the event-code table for its microprogram.
struct MacroBinding {
  std::map<std::string, Operand> slots;
  std::map<uint64_t, std::string> event_names;

  MacroBinding& bind(const std::string& slot, Operand o) {
    slots[slot] = std::move(o);
    return *this;
  }
  MacroBinding& bind_reg(const std::string& slot, RegisterId r,
                         Width w = Width::W64) {
    return bind(slot, Operand::make_reg(r, w));
  }
  MacroBinding& bind_imm(const std::string& slot, uint64_t v) {
    return bind(slot, Operand::make_imm(v));
  }
};

// ---------------------------------------------------------------- execution

enum class LatClass : uint8_t { Alu, Load, Creg, Uram, Seg, Div, Barrier };

struct MemRef {
  uint64_t addr = 0;
  unsigned bytes = 0;
  bool is_store = false;
  bool is_flush = false;
  TaintSet addr_taint;
};

struct BranchRes {
  bool taken = false;
  uint32_t target = 0;
};

struct WriteEffect {
  enum class Target : uint8_t { Reg, Creg, Uram, Mem, SegBase };
  Target target = Target::Reg;
  RegisterId reg{};
  uint64_t addr = 0;
  unsigned bytes = 8;
  TaintedValue value;
  bool buffered = true;  // false for creg/uram writes
};

struct ExecResult {
  std::vector<WriteEffect> effects;
  std::optional<BranchRes> branch;
  std::optional<MemRef> mem;
  std::optional<uint64_t> event_code;
  LatClass lat = LatClass::Alu;
};

struct ExecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand reads during execution go through a ValueSource so that the
// out-of-order pipeline can supply renamed in-flight values while the
// sequential interpreter reads MachineState directly.
class ValueSource {
 public:
  virtual TaintedValue reg(RegisterId r) = 0;
  virtual TaintedValue creg(uint16_t addr) = 0;
  virtual TaintedValue uram(uint16_t addr) = 0;
  virtual TaintedValue seg(SegReg s) = 0;
  virtual TaintedValue mem(uint64_t addr, unsigned bytes) = 0;
  virtual ~ValueSource() = default;
};

class StateValueSource : public ValueSource {
 public:
  explicit StateValueSource(const MachineState& st) : st_(st) {}
  TaintedValue reg(RegisterId r) override { return st_.reg(r); }
  TaintedValue creg(uint16_t addr) override { return st_.read_creg(addr); }
  TaintedValue uram(uint16_t addr) override { return st_.read_uram(addr); }
  TaintedValue seg(SegReg s) override { return st_.read_seg(s); }
  TaintedValue mem(uint64_t addr, unsigned bytes) override {
    return st_.read_mem(addr, bytes);
  }

 private:
  const MachineState& st_;
};

ExecResult exec_uop(const MicroOp& u, const MacroBinding& bind,
                    ValueSource& vs);

// Resolves Slot operands against the binding; other kinds pass through.
Operand resolve_operand(const Operand& o, const MacroBinding& bind);

// x86-style flag generation, shared with the test oracles by contract:
// zf/sf/pf(low byte)/af(nibble carry), cf = carry/borrow, of = signed
// overflow of the given width.
FlagSet flags_logic(uint64_t v, Width w);
FlagSet flags_add(uint64_t a, uint64_t b, Width w);
FlagSet flags_sub(uint64_t a, uint64_t b, Width w);

uint64_t width_mask(Width w);

}  // namespace ucsim
