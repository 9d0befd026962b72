#include "ucsim/scenario.hpp"

#include <fstream>
#include <sstream>

namespace ucsim {

namespace {

uint64_t parse_u64(const std::string& tok) {
  try {
    if (tok.size() > 2 && tok[0] == '0' && (tok[1] == 'x' || tok[1] == 'X'))
      return std::stoull(tok.substr(2), nullptr, 16);
    return std::stoull(tok, nullptr, 10);
  } catch (...) {
    throw ScenarioError("bad number '" + tok + "'");
  }
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(tolower(c));
  return s;
}

int cr4_bit_by_name(const std::string& n) {
  if (n == "PCE") return kCr4Pce;
  if (n == "FSGSBASE") return kCr4Fsgsbase;
  if (n == "OSXSAVE") return kCr4Osxsave;
  return -1;
}

int rflags_bit_by_name(const std::string& n) {
  if (n == "CF") return kRflagsCf;
  if (n == "PF") return kRflagsPf;
  if (n == "AF") return kRflagsAf;
  if (n == "ZF") return kRflagsZf;
  if (n == "SF") return kRflagsSf;
  if (n == "DF") return kRflagsDf;
  if (n == "OF") return kRflagsOf;
  return -1;
}

}  // namespace

uint64_t Scenario::planted_value(uint64_t seed, uint64_t addr) {
  // splitmix64 step keyed by (seed, addr)
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (addr + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z = z ^ (z >> 31);
  return z ? z : 1;  // keep planted values nonzero
}

uint16_t Scenario::plant_creg(uint16_t addr, uint64_t value, Secrecy s) {
  uint16_t id = labels->intern({TaintLabel::Origin::Creg, addr, addr, s});
  TaintedValue v{value, flags_logic(value, Width::W64), {}};
  v.taint.add(id);
  init.write_creg(addr, std::move(v));
  return id;
}

uint16_t Scenario::plant_uram(uint16_t addr, uint64_t value, Secrecy s) {
  uint16_t id = labels->intern({TaintLabel::Origin::Uram, addr, addr, s});
  TaintedValue v{value, flags_logic(value, Width::W64), {}};
  v.taint.add(id);
  init.write_uram(addr, std::move(v));
  return id;
}

uint16_t Scenario::plant_seg(SegReg seg, uint64_t value, Secrecy s) {
  uint64_t which = seg == SegReg::FS ? 0 : 1;
  uint16_t id = labels->intern({TaintLabel::Origin::SegBase, which, which, s});
  TaintedValue v{value, flags_logic(value, Width::W64), {}};
  v.taint.add(id);
  init.segbase[which] = std::move(v);
  return id;
}

uint16_t Scenario::plant_mem(uint64_t addr, const std::vector<uint8_t>& bytes,
                             Secrecy s) {
  uint16_t id = labels->intern(
      {TaintLabel::Origin::Memory, addr, addr + bytes.size(), s});
  for (size_t i = 0; i < bytes.size(); ++i) {
    TaintedValue b{bytes[i], flags_logic(bytes[i], Width::W8), {}};
    b.taint.add(id);
    init.mem[addr + i] = std::move(b);
  }
  return id;
}

void Scenario::set_reg(RegisterId r, uint64_t value) {
  init.reg(r) = TaintedValue{value, flags_logic(value, Width::W64), {}};
}

void Scenario::set_rflags_bit(int bit, bool v) {
  TaintedValue rf = init.read_creg(kCregRflags);
  rf.data = v ? (rf.data | (1ull << bit)) : (rf.data & ~(1ull << bit));
  init.write_creg(kCregRflags, std::move(rf));
}

void Scenario::set_cr4_bit(int bit, bool v) {
  TaintedValue cr = init.read_creg(kCregCr4);
  cr.data = v ? (cr.data | (1ull << bit)) : (cr.data & ~(1ull << bit));
  init.write_creg(kCregCr4, std::move(cr));
}

Scenario parse_scenario(const std::string& name, std::string_view text) {
  Scenario sc;
  sc.name = name;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    auto cut = raw.find("//");
    if (cut != std::string::npos) raw = raw.substr(0, cut);
    cut = raw.find('#');
    // '#' starts a comment unless it is part of a token like #GP (not used here)
    if (cut != std::string::npos) raw = raw.substr(0, cut);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t)
      if (t != "=") tok.push_back(t);
    if (tok.empty()) continue;
    auto fail = [&](const std::string& m) {
      throw ScenarioError(name + ":" + std::to_string(lineno) + ": " + m);
    };
    auto secrecy_at = [&](size_t idx) {
      return tok.size() > idx && lower(tok[idx]) == "secret" ? Secrecy::Secret
                                                             : Secrecy::Public;
    };
    std::string key = lower(tok[0]);
    if (key == "reg") {
      if (tok.size() < 3) fail("reg <name> = <value>");
      auto r = reg_from_name(tok[1]);
      if (!r) fail("unknown register '" + tok[1] + "'");
      sc.set_reg(r->reg, parse_u64(tok[2]));
      if (secrecy_at(3) == Secrecy::Secret) {
        uint16_t id = sc.labels->intern({TaintLabel::Origin::ArchReg,
                                         static_cast<uint64_t>(r->reg.index),
                                         static_cast<uint64_t>(r->reg.index),
                                         Secrecy::Secret});
        sc.init.reg(r->reg).taint.add(id);
      }
    } else if (key == "flags") {
      for (size_t i = 1; i < tok.size(); ++i) {
        auto eq = tok[i].find('=');
        if (eq == std::string::npos) fail("flags NAME=0|1");
        int bit = rflags_bit_by_name(tok[i].substr(0, eq));
        if (bit < 0) fail("unknown flag '" + tok[i] + "'");
        sc.set_rflags_bit(bit, tok[i].substr(eq + 1) == "1");
      }
    } else if (key == "cr4") {
      for (size_t i = 1; i < tok.size(); ++i) {
        auto eq = tok[i].find('=');
        if (eq == std::string::npos) fail("cr4 NAME=0|1");
        int bit = cr4_bit_by_name(tok[i].substr(0, eq));
        if (bit < 0) fail("unknown cr4 bit '" + tok[i] + "'");
        sc.set_cr4_bit(bit, tok[i].substr(eq + 1) == "1");
      }
    } else if (key == "creg") {
      if (tok.size() < 3) fail("creg <addr> = <value>");
      sc.plant_creg(static_cast<uint16_t>(parse_u64(tok[1])),
                    parse_u64(tok[2]), secrecy_at(3));
    } else if (key == "creg-range") {
      if (tok.size() < 5 || lower(tok[3]) != "seed")
        fail("creg-range <lo> <hi> seed <n> [secret]");
      uint64_t lo = parse_u64(tok[1]), hi = parse_u64(tok[2]),
               seed = parse_u64(tok[4]);
      Secrecy s = secrecy_at(5);
      for (uint64_t a = lo; a < hi; ++a)
        sc.plant_creg(static_cast<uint16_t>(a),
                      Scenario::planted_value(seed, a), s);
    } else if (key == "uram") {
      if (tok.size() < 3) fail("uram <addr> = <value>");
      sc.plant_uram(static_cast<uint16_t>(parse_u64(tok[1])),
                    parse_u64(tok[2]), secrecy_at(3));
    } else if (key == "seg") {
      if (tok.size() < 3) fail("seg fs|gs = <value>");
      std::string s = lower(tok[1]);
      if (s != "fs" && s != "gs") fail("seg fs|gs = <value>");
      sc.plant_seg(s == "fs" ? SegReg::FS : SegReg::GS, parse_u64(tok[2]),
                   secrecy_at(3));
    } else if (key == "mem") {
      if (tok.size() < 3) fail("mem <addr> = <bytes...>");
      uint64_t addr = parse_u64(tok[1]);
      std::vector<uint8_t> bytes;
      size_t i = 2;
      for (; i < tok.size() && lower(tok[i]) != "secret"; ++i)
        bytes.push_back(static_cast<uint8_t>(std::stoul(tok[i], nullptr, 16)));
      sc.plant_mem(addr, bytes,
                   i < tok.size() ? Secrecy::Secret : Secrecy::Public);
    } else if (key == "mem-fill") {
      if (tok.size() < 4) fail("mem-fill <addr> <len> <byte> [secret]");
      uint64_t addr = parse_u64(tok[1]), len = parse_u64(tok[2]),
               byte = parse_u64(tok[3]);
      std::vector<uint8_t> bytes(len, static_cast<uint8_t>(byte));
      sc.plant_mem(addr, bytes, secrecy_at(4));
    } else if (key == "flush") {
      if (tok.size() < 2) fail("flush <addr>");
      sc.flush.push_back(parse_u64(tok[1]));
    } else if (key == "flush-range") {
      if (tok.size() < 3) fail("flush-range <lo> <hi>");
      for (uint64_t a = parse_u64(tok[1]); a < parse_u64(tok[2]); a += 64)
        sc.flush.push_back(a);
    } else if (key == "mode") {
      sc.mode32 = tok.size() > 1 && tok[1] == "32";
    } else if (key == "config") {
      if (tok.size() < 3) fail("config <key> = <value>");
      sc.config_kv[lower(tok[1])] = static_cast<long>(parse_u64(tok[2]));
    } else if (key == "unauthorized") {
      if (tok.size() < 3) fail("unauthorized creg|uram|mem <addr>");
      std::string kind = lower(tok[1]);
      uint64_t addr = parse_u64(tok[2]);
      TaintLabel::Origin o = kind == "creg"   ? TaintLabel::Origin::Creg
                             : kind == "uram" ? TaintLabel::Origin::Uram
                                              : TaintLabel::Origin::Memory;
      sc.unauthorized.push_back(
          sc.labels->intern({o, addr, addr, Secrecy::Secret}));
    } else {
      fail("unknown directive '" + tok[0] + "'");
    }
  }
  return sc;
}

Scenario load_scenario_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ScenarioError("cannot open scenario file " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(p.stem().string(), ss.str());
}

}  // namespace ucsim
