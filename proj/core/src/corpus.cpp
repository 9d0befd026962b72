#include "ucsim/corpus.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ucsim {

namespace {

constexpr RegisterId kRax{RegClass::IntArch, 0};
constexpr RegisterId kRcx{RegClass::IntArch, 1};
constexpr RegisterId kRdx{RegClass::IntArch, 2};
constexpr RegisterId kRbx{RegClass::IntArch, 3};
constexpr RegisterId kRsi{RegClass::IntArch, 6};
constexpr RegisterId kRdi{RegClass::IntArch, 7};
constexpr RegisterId kR8{RegClass::IntArch, 8};
constexpr RegisterId kR9{RegClass::IntArch, 9};

struct FixtureMeta {
  const char* name;
  const char* file;  // .uasm file (sans extension)
  const char* signature;
  AttackClass cls;
  int findings;
};

const FixtureMeta kFixtures[] = {
    {"cld", "cld", "cld", AttackClass::MVI, 1},
    {"std", "std", "std", AttackClass::Benign, 0},
    {"rdfsbase", "rdfsbase", "rdfsbase r64", AttackClass::MEB, 1},
    {"rdgsbase", "rdfsbase", "rdgsbase r64", AttackClass::MEB, 1},
    {"xgetbv", "xgetbv", "xgetbv", AttackClass::MEB, 2},
    {"rdpmc", "rdpmc", "rdpmc", AttackClass::MEB, 3},
    {"rdpmc_hardened", "rdpmc_hardened", "rdpmc", AttackClass::MEB, 3},
    {"bound", "bound", "bound r32, m32", AttackClass::MEB, 2},
    {"bndcn", "bndcn", "bndcn bnd, m64", AttackClass::MeltdownContrast, 0},
    {"div", "div", "div r64", AttackClass::MVI, 1},
    {"repne_scasb", "repne_scasb", "repne scasb", AttackClass::MIL, 2},
    {"into", "into", "into", AttackClass::MEB, 1},
};

const FixtureMeta* find_meta(const std::string& name) {
  for (const auto& m : kFixtures)
    if (name == m.name) return &m;
  return nullptr;
}

MacroBinding default_binding_for(const std::string& name) {
  MacroBinding b;
  if (name == "rdfsbase" || name == "rdgsbase") {
    b.bind("fs/gs", Operand::make_seg(name == "rdfsbase" ? SegReg::FS
                                                         : SegReg::GS));
    b.bind_reg("r64", kRbx);
    b.event_names[0x19] = "#GP";
  } else if (name == "xgetbv") {
    b.event_names[0x19] = "#UD";
    b.event_names[0xf5] = "#GP";
  } else if (name == "rdpmc" || name == "rdpmc_hardened") {
    b.event_names[0x19] = "#GP";
  } else if (name == "bound") {
    b.bind_reg("r32", kRax, Width::W32);
    b.bind_reg("m32base", kRbx);
    b.bind_imm("m32idx", 0);
    b.bind_imm("m32scale", 1);
    b.bind_imm("m32disp", 0);
    b.event_names[0x15] = "#BR";
  } else if (name == "bndcn") {
    b.bind_reg("m64base", kRbx);
    b.bind_imm("m64idx", 0);
    b.bind_imm("m64scale", 1);
    b.bind_imm("m64disp", 0);
    b.bind_imm("bnd.ub", 0x2000);
    b.event_names[0x15] = "#BR";
  } else if (name == "div") {
    b.bind_reg("r64", kRcx);
  } else if (name == "repne_scasb") {
    b.bind_imm("n", 1);
  } else if (name == "into") {
    b.event_names[0x04] = "#OF";
  }
  return b;
}

}  // namespace

const char* attack_class_name(AttackClass c) {
  switch (c) {
    case AttackClass::MEB: return "MEB";
    case AttackClass::MVI: return "MVI";
    case AttackClass::MIL: return "MIL";
    case AttackClass::MeltdownContrast: return "meltdown-contrast";
    case AttackClass::Benign: return "benign";
  }
  return "?";
}

const std::vector<std::string>& fixture_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& m : kFixtures) v.push_back(m.name);
    return v;
  }();
  return names;
}

std::filesystem::path corpus_dir() {
  if (const char* env = std::getenv("UCSIM_CORPUS")) return env;
#ifdef UCSIM_DEFAULT_CORPUS_DIR
  return UCSIM_DEFAULT_CORPUS_DIR;
#else
  return "corpus";
#endif
}

Fixture load_fixture(const std::string& name) {
  const FixtureMeta* meta = find_meta(name);
  if (!meta) throw UnknownFixtureError("unknown fixture '" + name + "'");
  std::filesystem::path path =
      corpus_dir() / (std::string(meta->file) + ".uasm");
  std::ifstream in(path);
  if (!in)
    throw UnknownFixtureError("cannot open fixture file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();

  Fixture f;
  f.name = name;
  f.source = ss.str();
  f.prog = assemble_text(meta->file, f.source);
  f.prog.validate();
  f.macro_signature = meta->signature;
  f.default_binding = default_binding_for(name);
  f.expected_class = meta->cls;
  f.expected_findings = meta->findings;
  return f;
}

Scenario load_corpus_scenario(const std::string& scen_name) {
  return load_scenario_file(corpus_dir() / (scen_name + ".scen"));
}

MacroOp macro_of(const Fixture& f) { return macro_of(f, f.default_binding); }

MacroOp macro_of(const Fixture& f, MacroBinding bind) {
  return macro_from_prog(f.name, &f.prog, std::move(bind));
}

MacroOp macro_from_prog(const std::string& mnemonic, const Microprogram* prog,
                        MacroBinding bind) {
  MacroOp m;
  m.mnemonic = mnemonic;
  m.bind = std::move(bind);
  m.body = prog;
  return m;
}

// ------------------------------------------------------------------ drivers

MacroProgram attack_driver(DriverPattern p, const DriverParams& prm) {
  if (!prm.victim) throw UnboundParamError("driver victim macro-op is unbound");
  MacroProgram prog;
  if (prm.slow_reg)
    prog.push_back(mite::ld_abs(*prm.slow_reg, kSlotAddr, 8));
  prog.push_back(*prm.victim);

  auto transmit_from_rsi = [&] {
    prog.push_back(mite::shr_ri(kRsi, static_cast<uint64_t>(prm.byte_sel) * 8));
    prog.push_back(mite::and_ri(kRsi, 0xFF));
    prog.push_back(mite::shl_ri(kRsi, 9));
    prog.push_back(mite::add_ri(kRsi, prm.transmit_base));
    prog.push_back(mite::ld(kR8, kRsi, 0, 8));
  };

  switch (p) {
    case DriverPattern::Meb1:
    case DriverPattern::Mvi:
    case DriverPattern::Pcidx:
      if (prm.combine_rdx) {
        prog.push_back(mite::mov_rr(kRsi, kRdx));
        prog.push_back(mite::shl_ri(kRsi, 32));
        prog.push_back(mite::or_rr(kRsi, prm.expose));
      } else {
        prog.push_back(mite::mov_rr(kRsi, prm.expose));
      }
      transmit_from_rsi();
      break;

    case DriverPattern::Meb2: {
      if (prm.transmit_abs) {
        prog.push_back(mite::ld_abs(kR9, *prm.transmit_abs, 1));
      } else {
        if (!prm.index_reg)
          throw UnboundParamError("Meb2 driver needs an index register");
        prog.push_back(mite::mov_rr(kRsi, *prm.index_reg));
        prog.push_back(mite::add_ri(kRsi, prm.buf_base));
        prog.push_back(mite::ld(kR9, kRsi, 0, 1));
      }
      prog.push_back(mite::shl_ri(kR9, 9));
      prog.push_back(mite::add_ri(kR9, prm.transmit_base));
      prog.push_back(mite::ld(kR8, kR9, 0, 8));
      break;
    }

    case DriverPattern::Mil:
      break;  // prime (scenario flushes) + invoke only
  }
  return prog;
}

// ----------------------------------------------------------------- attacks

const std::vector<std::string>& attack_names() {
  static const std::vector<std::string> names = {
      "pcidx",      "meb-rdfsbase", "meb-rdgsbase",
      "meb-xgetbv", "meb-rdpmc",    "meb-bound",
      "mvi-div",    "mil-scasb",    "meltdown-bndcn"};
  return names;
}

AttackSetup build_attack(const std::string& name, const AttackOptions& opt,
                         const Microprogram* victim_override) {
  AttackSetup s;
  DriverParams prm;
  auto load_into = [&](const std::string& fixture,
                       const std::string& scenario) {
    Fixture f = load_fixture(fixture);
    s.fixture_name = fixture;
    s.victim = std::make_shared<Microprogram>(
        victim_override ? *victim_override : f.prog);
    s.scenario = load_corpus_scenario(scenario);
    prm.victim =
        macro_from_prog(f.name, s.victim.get(), f.default_binding);
  };

  if (name == "pcidx") {
    load_into("rdpmc", "pcidx");
    uint32_t phys = (opt.creg - kCregPmcBase) & 0xFF;
    uint32_t pmc = (phys >> 2) | (phys << 30);
    std::vector<uint8_t> slot(8, 0);
    for (int i = 0; i < 8; ++i) slot[i] = (pmc >> (8 * i)) & 0xFF;
    s.scenario.plant_mem(kSlotAddr, slot, Secrecy::Public);
    prm.slow_reg = kRcx;
    prm.combine_rdx = true;
    prm.expose = kRax;
    prm.byte_sel = opt.byte_sel;
    s.program = attack_driver(DriverPattern::Pcidx, prm);
    s.expected_value = Scenario::planted_value(42, opt.creg);
    // a valid counter index retires architecturally; others end in #GP
    uint32_t rcx_ok_lo = pmc <= 3;
    uint32_t rcx_ok_hi = pmc >= 0x40000000 && pmc <= 0x40000002;
    s.expect_event = !(rcx_ok_lo || rcx_ok_hi);
  } else if (name == "meb-rdfsbase" || name == "meb-rdgsbase") {
    bool fs = name == "meb-rdfsbase";
    load_into(fs ? "rdfsbase" : "rdgsbase",
              fs ? "rdfsbase_attack" : "rdgsbase_attack");
    prm.expose = kRbx;
    prm.byte_sel = opt.byte_sel;
    s.program = attack_driver(DriverPattern::Meb1, prm);
    s.expected_value = s.scenario.init.read_seg(fs ? SegReg::FS : SegReg::GS).data;
    s.expect_event = true;
  } else if (name == "meb-xgetbv") {
    load_into("xgetbv", "xgetbv_attack");
    prm.expose = kRax;
    prm.byte_sel = opt.byte_sel;
    s.program = attack_driver(DriverPattern::Meb1, prm);
    uint64_t xcr0 = s.scenario.init.read_uram(kUramXcr0).data;
    s.expected_value = (xcr0 >> 0x38) | 1;  // value the microprogram exposes
    s.expect_event = true;
  } else if (name == "meb-rdpmc") {
    load_into("rdpmc", "rdpmc_pce");
    prm.combine_rdx = true;
    prm.expose = kRax;
    prm.byte_sel = opt.byte_sel;
    s.program = attack_driver(DriverPattern::Meb1, prm);
    s.expected_value = s.scenario.init.read_creg(kCregPmcBase).data;
    s.expect_event = true;
  } else if (name == "meb-bound") {
    load_into("bound", "bound_attack");
    prm.index_reg = kRax;
    s.program = attack_driver(DriverPattern::Meb2, prm);
    s.expected_value = 0x5a;  // planted at buf + idx
    s.expect_event = true;
  } else if (name == "mvi-div") {
    load_into("div", "div_zdi");
    // register setup as in the counter snippet, with a slow-resolving rdx
    s.program.push_back(mite::ld_abs(kRdx, kSlotAddr, 8));
    s.program.push_back(mite::mov_ri(kRax, 0x60));
    s.program.push_back(mite::mov_ri(kRcx, 7));
    s.program.push_back(*prm.victim);
    // transmit of the transient quotient in rax
    s.program.push_back(mite::mov_rr(kRsi, kRax));
    s.program.push_back(mite::shr_ri(kRsi, static_cast<uint64_t>(opt.byte_sel) * 8));
    s.program.push_back(mite::and_ri(kRsi, 0xFF));
    s.program.push_back(mite::shl_ri(kRsi, 9));
    s.program.push_back(mite::add_ri(kRsi, kTransmitArrayBase));
    s.program.push_back(mite::ld(kR8, kRsi, 0, 8));
    s.expected_value = 0x60 / 7;  // quotient as if rdx were zero
    s.expect_event = false;
  } else if (name == "mil-scasb") {
    load_into("repne_scasb", "scasb_attack");
    prm.slow_reg = kRcx;
    s.program = attack_driver(DriverPattern::Mil, prm);
    s.expected_value = 0;
    s.expect_event = false;
  } else if (name == "meltdown-bndcn") {
    load_into("bndcn", "bndcn_attack");
    prm.transmit_abs = kBufBase + 0x3000;
    s.program = attack_driver(DriverPattern::Meb2, prm);
    s.expected_value = 0x77;
    s.expect_event = true;
  } else {
    throw UnknownFixtureError("unknown attack '" + name + "'");
  }
  return s;
}

RunStream build_run_stream(const std::string& list, int reps) {
  RunStream rs;
  std::vector<std::string> items;
  std::string cur;
  for (char c : list) {
    if (c == ',') {
      items.push_back(cur);
      cur.clear();
    } else if (!isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) items.push_back(cur);
  if (items.empty()) throw UnknownFixtureError("empty run stream");

  std::vector<MacroOp> once;
  for (const auto& it : items) {
    if (it == "lfence") {
      once.push_back(mite::lfence());
    } else if (it == "nop") {
      once.push_back(mite::nop());
    } else {
      Fixture f = load_fixture(it);
      auto prog = std::make_shared<Microprogram>(f.prog);
      rs.progs.push_back(prog);
      once.push_back(macro_from_prog(f.name, prog.get(), f.default_binding));
    }
  }
  for (int r = 0; r < reps; ++r)
    for (const auto& m : once) rs.program.push_back(m);
  return rs;
}

}  // namespace ucsim
