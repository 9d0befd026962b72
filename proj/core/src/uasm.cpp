#include "ucsim/uasm.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

namespace ucsim {

namespace {

std::string upper(std::string_view s) {
  std::string u(s);
  for (auto& c : u) c = static_cast<char>(toupper(c));
  return u;
}
std::string lower(std::string_view s) {
  std::string u(s);
  for (auto& c : u) c = static_cast<char>(tolower(c));
  return u;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

const std::map<std::string, uint64_t>& named_imms() {
  static const std::map<std::string, uint64_t> m = {
      {"RFLAGS", kCregRflags},
      {"CR4", kCregCr4},
      {"BASE", 0},
  };
  return m;
}

const std::set<std::string>& slot_tokens() {
  static const std::set<std::string> s = {
      "r64",     "r32",      "m32base", "m32idx",  "m32scale", "m32disp",
      "m64base", "m64idx",   "m64scale", "m64disp", "bnd.ub",   "n",
      "fs/gs"};
  return s;
}

const std::map<std::string, Opcode>& plain_opcodes() {
  static const std::map<std::string, Opcode> m = {
      {"NOP", Opcode::Nop},
      {"UNK_109", Opcode::Unk109},
      {"UNK_256", Opcode::Unk256},
      {"ADD8", Opcode::Add8},
      {"ADD32", Opcode::Add32},
      {"ADD64", Opcode::Add64},
      {"SUB32", Opcode::Sub32},
      {"SUB64", Opcode::Sub64},
      {"ADDSUB64", Opcode::AddSub64},
      {"OR32", Opcode::Or32},
      {"OR64", Opcode::Or64},
      {"AND32", Opcode::And32},
      {"AND64", Opcode::And64},
      {"NOTAND32", Opcode::Notand32},
      {"XOR64", Opcode::Xor64},
      {"ROL32", Opcode::Rol32},
      {"SHR32", Opcode::Shr32},
      {"SHR64", Opcode::Shr64},
      {"SHR_DSZ64", Opcode::ShrDsz64},
      {"SHL64", Opcode::Shl64},
      {"ZEROEXT32", Opcode::ZeroExt32},
      {"ZEROEXT64", Opcode::ZeroExt64},
      {"ZEROEXTN", Opcode::ZeroExtN},
      {"MOVE64", Opcode::Move64},
      {"MOVE_MERGEFLAGS32", Opcode::MoveMergeFlags32},
      {"GENARITHFLAGS", Opcode::GenArithFlags},
      {"SIGEVENT", Opcode::SigEvent},
      {"RDCREG64", Opcode::RdCreg64},
      {"WRCREG64", Opcode::WrCreg64},
      {"BTS_WRCREG64", Opcode::BtsWrCreg64},
      {"READURAM64", Opcode::RdUram64},
      {"WRURAM64", Opcode::WrUram64},
      {"RDSEG", Opcode::RdSeg},
      {"LD32", Opcode::Ld32},
      {"LD64", Opcode::Ld64},
      {"LDZXN", Opcode::LdZx},
      {"ST8", Opcode::St8},
      {"ST32", Opcode::St32},
      {"ST64", Opcode::St64},
      {"LA2LIN32", Opcode::La2Lin32},
      {"UDIV64", Opcode::Udiv64},
      {"UREM64", Opcode::Urem64},
      {"UDIV128", Opcode::Udiv128},
      {"UREM128", Opcode::Urem128},
      {"SFENCE", Opcode::Sfence},
      {"LFENCE", Opcode::Lfence},
      {"CFLUSH", Opcode::Cflush},
  };
  return m;
}

bool parse_number(std::string_view tok, uint64_t* out) {
  if (tok.empty()) return false;
  std::string s(tok);
  size_t pos = 0;
  try {
    unsigned long long v;
    if (s.size() > 2 && (s[0] == '0') && (s[1] == 'x' || s[1] == 'X'))
      v = std::stoull(s.substr(2), &pos, 16), pos += 2;
    else
      v = std::stoull(s, &pos, 10);
    if (pos != s.size()) return false;
    *out = v;
    return true;
  } catch (...) {
    return false;
  }
}

bool label_like(std::string_view tok) {
  if (tok.empty()) return false;
  for (char c : tok)
    if (!isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.' &&
        c != '#' && c != '/')
      return false;
  return true;
}

struct PendingRef {
  uint32_t triad;  // triad index
  int slot;        // uop slot, or -1 for the triad's goto
  int line;
  std::string label;
};

struct Packer {
  Microprogram prog;
  std::vector<MicroOp> cur;
  bool label_since_close = true;  // start of program behaves like a label
  std::vector<PendingRef> refs;

  void close(SeqDirective s) {
    Triad t;
    for (size_t i = 0; i < 3; ++i)
      t.uops[i] = i < cur.size() ? cur[i] : MicroOp::nop(true);
    t.seqw = std::move(s);
    prog.triads.push_back(std::move(t));
    cur.clear();
    label_since_close = false;
  }

  void add_uop(MicroOp u, int line) {
    if (cur.size() == 3) close(SeqDirective{});
    if (u.target && u.target->kind == Operand::Kind::Label)
      refs.push_back({static_cast<uint32_t>(prog.triads.size()),
                      static_cast<int>(cur.size()), line, u.target->name});
    cur.push_back(std::move(u));
    label_since_close = false;
  }

  void add_label(const std::string& name, int line) {
    if (!cur.empty()) close(SeqDirective{});
    uint32_t addr = static_cast<uint32_t>(prog.triads.size()) * 3;
    if (prog.labels.count(name))
      throw AsmError(line, "duplicate label '" + name + "'");
    prog.labels[name] = addr;
    label_since_close = true;
  }

  void add_seqw(SeqDirective s, int line) {
    if (s.kind == SeqKind::Goto)
      refs.push_back({0, -1, line, s.label});  // triad fixed up below
    if (!cur.empty()) {
      if (s.kind == SeqKind::Goto) refs.back().triad = prog.triads.size();
      close(std::move(s));
      return;
    }
    if (!prog.triads.empty() && !label_since_close &&
        prog.triads.back().seqw.kind == SeqKind::None) {
      if (s.kind == SeqKind::Goto) refs.back().triad = prog.triads.size() - 1;
      prog.triads.back().seqw = std::move(s);
      return;
    }
    // directive with no open triad to attach to: emit a padding triad
    if (s.kind == SeqKind::Goto) refs.back().triad = prog.triads.size();
    close(std::move(s));
  }

  void finish() {
    if (!cur.empty()) close(SeqDirective{});
  }
};

struct Parser {
  const std::string& name;
  Packer pk;

  Operand parse_operand(std::string_view tok, int line, bool target_pos) {
    tok = trim(tok);
    if (tok.empty()) throw AsmError(line, "malformed-operand: empty operand");
    uint64_t num;
    if (parse_number(tok, &num)) return Operand::make_imm(num);
    std::string lo = lower(tok), up = upper(tok);
    if (lo == "fs/gs") return Operand::make_slot("fs/gs");
    if (up == "FS") return Operand::make_seg(SegReg::FS);
    if (up == "GS") return Operand::make_seg(SegReg::GS);
    if (up == "DS") return Operand::make_seg(SegReg::DS);
    if (auto r = reg_from_name(tok)) return Operand::make_reg(r->reg, r->width);
    if (auto it = named_imms().find(up); it != named_imms().end())
      return Operand::make_imm(it->second, it->first);
    if (slot_tokens().count(lo)) return Operand::make_slot(lo);
    if (target_pos && label_like(tok)) return Operand::make_label(std::string(tok));
    throw AsmError(line, "malformed-operand: '" + std::string(tok) + "'");
  }

  std::vector<std::string> split_args(std::string_view inside) {
    std::vector<std::string> out;
    std::string curtok;
    for (char c : inside) {
      if (c == ',') {
        out.push_back(curtok);
        curtok.clear();
      } else {
        curtok += c;
      }
    }
    if (!trim(curtok).empty() || !out.empty()) out.push_back(curtok);
    return out;
  }

  MicroOp parse_stmt(std::string_view stmt, int line) {
    MicroOp u;
    auto eq = stmt.find('=');
    std::string_view rhs = stmt;
    if (eq != std::string_view::npos) {
      std::string_view lhs = trim(stmt.substr(0, eq));
      rhs = trim(stmt.substr(eq + 1));
      Operand d = parse_operand(lhs, line, false);
      if (d.kind != Operand::Kind::Reg && d.kind != Operand::Kind::Slot)
        throw AsmError(line, "malformed-operand: destination must be a register");
      u.dst = d;
    }
    auto paren = rhs.find('(');
    std::string mnem;
    std::vector<std::string> args;
    if (paren == std::string_view::npos) {
      mnem = upper(trim(rhs));
    } else {
      if (rhs.back() != ')')
        throw AsmError(line, "malformed-operand: missing ')'");
      mnem = upper(trim(rhs.substr(0, paren)));
      args = split_args(rhs.substr(paren + 1, rhs.size() - paren - 2));
    }
    if (mnem.empty()) throw AsmError(line, "malformed statement");

    bool is_branch = false;
    if (mnem.rfind("CMP_UJMP", 0) == 0) {
      u.op = Opcode::CmpUjmpCc;
      auto cc = cond_from_name(mnem.substr(8));
      if (!cc) throw AsmError(line, "unknown-opcode '" + mnem + "'");
      u.cc = *cc;
      is_branch = true;
    } else if (mnem.rfind("BT_UJMP", 0) == 0) {
      u.op = Opcode::BtUjmpCc;
      auto cc = cond_from_name(mnem.substr(7));
      if (!cc) throw AsmError(line, "unknown-opcode '" + mnem + "'");
      u.cc = *cc;
      is_branch = true;
    } else if (mnem.rfind("UJMP", 0) == 0) {
      if (mnem.size() == 4) {
        u.op = Opcode::Ujmp;
      } else {
        auto cc = cond_from_name(mnem.substr(4));
        if (!cc) throw AsmError(line, "unknown-opcode '" + mnem + "'");
        u.op = Opcode::UjmpCc;
        u.cc = *cc;
      }
      is_branch = true;
    } else if (mnem.rfind("SELECT", 0) == 0 && mnem != "SELECT") {
      auto cc = cond_from_name(mnem.substr(6));
      if (!cc) throw AsmError(line, "unknown-opcode '" + mnem + "'");
      u.op = Opcode::Select;
      u.cc = *cc;
    } else {
      auto it = plain_opcodes().find(mnem);
      if (it == plain_opcodes().end())
        throw AsmError(line, "unknown-opcode '" + mnem + "'");
      u.op = it->second;
    }

    size_t nsrc = args.size();
    if (is_branch) {
      if (args.empty())
        throw AsmError(line, "branch without target");
      nsrc -= 1;
      Operand tgt = parse_operand(args.back(), line, true);
      if (tgt.kind != Operand::Kind::Label && tgt.kind != Operand::Kind::Reg)
        throw AsmError(line, "malformed-operand: branch target");
      u.target = tgt;
    }
    for (size_t i = 0; i < nsrc; ++i)
      u.srcs.push_back(parse_operand(args[i], line, false));

    // arity checks for the branch forms
    if (u.op == Opcode::UjmpCc && u.srcs.size() != 1)
      throw AsmError(line, "UJMPcc expects (cond_reg, target)");
    if (u.op == Opcode::CmpUjmpCc && u.srcs.size() != 2)
      throw AsmError(line, "CMP_UJMPcc expects (reg, imm, target)");
    if (u.op == Opcode::BtUjmpCc && u.srcs.size() != 2)
      throw AsmError(line, "BT_UJMPcc expects (reg, bit, target)");
    if (u.op == Opcode::Ujmp && !u.srcs.empty())
      throw AsmError(line, "UJMP expects (target)");
    return u;
  }

  Microprogram run(std::string_view text) {
    pk.prog.name = name;
    int line = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
      size_t nl = text.find('\n', pos);
      std::string_view raw = text.substr(
          pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++line;
      auto cmt = raw.find("//");
      if (cmt != std::string_view::npos) raw = raw.substr(0, cmt);
      std::string_view s = trim(raw);
      if (s.empty()) continue;
      if (s.back() == ':') {
        std::string_view lbl = trim(s.substr(0, s.size() - 1));
        if (!label_like(lbl))
          throw AsmError(line, "malformed label '" + std::string(lbl) + "'");
        pk.add_label(std::string(lbl), line);
        continue;
      }
      if (upper(s.substr(0, 5)) == "SEQW " || upper(s) == "SEQW") {
        std::istringstream is{std::string(s.substr(4))};
        std::string kindtok, arg;
        is >> kindtok >> arg;
        std::string k = upper(kindtok);
        SeqDirective d;
        if (k == "UEND0") d.kind = SeqKind::Uend0;
        else if (k == "UEND2") d.kind = SeqKind::Uend2;
        else if (k == "LFNCEMARK") d.kind = SeqKind::LfnceMark;
        else if (k == "LFNCEWAIT") d.kind = SeqKind::LfnceWait;
        else if (k == "SYNCMARK") d.kind = SeqKind::SyncMark;
        else if (k == "SYNCWAIT") d.kind = SeqKind::SyncWait;
        else if (k == "SYNCFULL") d.kind = SeqKind::SyncFull;
        else if (k == "GOTO") {
          if (!label_like(arg))
            throw AsmError(line, "SEQW GOTO needs a label");
          d.kind = SeqKind::Goto;
          d.label = arg;
        } else {
          throw AsmError(line, "unknown sequence word '" + kindtok + "'");
        }
        pk.add_seqw(std::move(d), line);
        continue;
      }
      pk.add_uop(parse_stmt(s, line), line);
    }
    pk.finish();
    if (pk.prog.triads.empty())
      throw AsmError(line, "unresolved-entrypoint: empty source");

    // resolve label references
    for (const auto& ref : pk.refs) {
      auto it = pk.prog.labels.find(ref.label);
      if (it == pk.prog.labels.end())
        throw AsmError(ref.line, "unresolved-label '" + ref.label + "'");
      if (ref.slot < 0) {
        pk.prog.triads[ref.triad].seqw.target = it->second;
      } else {
        pk.prog.triads[ref.triad].uops[ref.slot].target->imm = it->second;
      }
    }
    pk.prog.validate();
    return std::move(pk.prog);
  }
};

}  // namespace

Microprogram assemble(const SourceUnit& src) {
  Parser p{src.name};
  return p.run(src.text);
}

Microprogram assemble_text(const std::string& name, std::string_view text) {
  Parser p{name};
  return p.run(text);
}

std::string disassemble(const Microprogram& p) {
  std::ostringstream os;
  for (uint32_t ti = 0; ti < p.triads.size(); ++ti) {
    uint32_t addr = ti * 3;
    auto labels = p.labels_at(addr);
    std::sort(labels.begin(), labels.end());
    for (const auto& l : labels) os << l << ":\n";
    const Triad& t = p.triads[ti];
    for (const auto& u : t.uops)
      if (!u.pad) os << "  " << uop_to_string(u) << "\n";
    if (t.seqw.kind != SeqKind::None) {
      os << "  SEQW " << seq_name(t.seqw.kind);
      if (t.seqw.kind == SeqKind::Goto) os << " " << t.seqw.label;
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace ucsim
