// ucsim: scenario setup files
//
// Text format, one directive per line ('#' or '//' comments):
//   reg rax = 0x1000 [secret]
//   flags DF=1 OF=0
//   cr4 PCE=0 FSGSBASE=1 OSXSAVE=1
//   creg 0x2260 = 0x1122334455667788 [secret]
//   creg-range 0x2200 0x2300 seed 42 secret
//   uram 0x5b = 0x7 [secret]
//   seg fs = 0x7f0011223344 [secret]
//   mem 0x1000 = ab cd 01 [secret]
//   mem-fill 0x2000 8 0x41 [secret]
//   flush 0x3000
//   flush-range 0x20000 0x40000
//   mode 32
//   config detect_delay = 4
//   unauthorized creg 0x2260

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ucsim/machine.hpp"

namespace ucsim {

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Scenario {
  std::string name;
  std::shared_ptr<LabelRegistry> labels = std::make_shared<LabelRegistry>();
  MachineState init;
  std::vector<uint64_t> flush;           // line-granular pre-run flushes
  bool mode32 = false;
  std::map<std::string, long> config_kv; // per-scenario config overrides
  std::vector<uint16_t> unauthorized;    // labels unauthorized even architecturally

  // Deterministic value used by creg-range planting; exposed so tests and
  // drivers can recompute the planted ground truth.
  static uint64_t planted_value(uint64_t seed, uint64_t addr);

  uint16_t plant_creg(uint16_t addr, uint64_t value, Secrecy s);
  uint16_t plant_uram(uint16_t addr, uint64_t value, Secrecy s);
  uint16_t plant_seg(SegReg seg, uint64_t value, Secrecy s);
  uint16_t plant_mem(uint64_t addr, const std::vector<uint8_t>& bytes,
                     Secrecy s);
  void set_reg(RegisterId r, uint64_t value);
  void set_rflags_bit(int bit, bool v);
  void set_cr4_bit(int bit, bool v);
};

Scenario parse_scenario(const std::string& name, std::string_view text);
Scenario load_scenario_file(const std::filesystem::path& p);

}  // namespace ucsim
