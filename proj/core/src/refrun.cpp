#include "ucsim/refrun.hpp"

#include <sstream>

namespace ucsim {

namespace {

void apply_effects(MachineState& st, const std::vector<WriteEffect>& effects) {
  for (const auto& ef : effects) {
    switch (ef.target) {
      case WriteEffect::Target::Reg:
        st.reg(ef.reg) = ef.value;
        break;
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
}

}  // namespace

SeqResult run_sequential(const MacroProgram& prog, const MachineState& init,
                         long step_limit) {
  SeqResult out;
  out.state = init;
  MachineState& st = out.state;

  for (const MacroOp& m : prog) {
    if (out.event) break;
    if (!m.is_ms()) {
      const MiteBody& b = std::get<MiteBody>(m.body);
      for (const MicroOp& u : b.uops) {
        if (u.pad) continue;
        StateValueSource vs(st);
        ExecResult r = exec_uop(u, m.bind, vs);
        apply_effects(st, r.effects);
        ++out.uops_executed;
        if (r.event_code && *r.event_code != 0) {
          std::ostringstream os;
          os << "#0x" << std::hex << *r.event_code;
          auto it = m.bind.event_names.find(*r.event_code);
          out.event = PendingEvent{
              *r.event_code,
              it != m.bind.event_names.end() ? it->second : os.str()};
          break;
        }
      }
      continue;
    }

    const Microprogram* p = m.prog();
    uint32_t upc = p->entry;
    bool done = false;
    while (!done && !out.event) {
      const Triad& t = p->triads[upc / 3];
      bool redirected = false;
      for (int slot = 0; slot < 3; ++slot) {
        const MicroOp& u = t.uops[slot];
        if (u.pad) continue;
        if (++out.uops_executed > step_limit) {
          out.step_limit_hit = true;
          return out;
        }
        StateValueSource vs(st);
        ExecResult r = exec_uop(u, m.bind, vs);
        apply_effects(st, r.effects);
        if (r.event_code && *r.event_code != 0) {
          std::ostringstream os;
          os << "#0x" << std::hex << *r.event_code;
          auto it = m.bind.event_names.find(*r.event_code);
          out.event = PendingEvent{
              *r.event_code,
              it != m.bind.event_names.end() ? it->second : os.str()};
          st.pending_event = out.event;
          break;
        }
        if (r.branch && r.branch->taken) {
          upc = r.branch->target;
          redirected = true;
          break;
        }
      }
      if (out.event) break;
      if (redirected) continue;
      switch (t.seqw.kind) {
        case SeqKind::Uend0:
        case SeqKind::Uend2:
          done = true;
          break;
        case SeqKind::Goto:
          upc = t.seqw.target;
          break;
        default:
          upc += 3;
          break;
      }
      if (!done && upc >= p->size())
        throw SimError(p->name + ": sequential run fell off the microprogram");
    }
  }
  return out;
}

}  // namespace ucsim
