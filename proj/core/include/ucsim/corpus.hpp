// ucsim: fixture library and attack drivers
//
// Loads microprograms and scenario files from the corpus directory
// (UCSIM_CORPUS env var or the build-time default) and builds the macro-op
// attack driver programs around them.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ucsim/pipeline.hpp"
#include "ucsim/scenario.hpp"
#include "ucsim/uasm.hpp"

namespace ucsim {

enum class AttackClass : uint8_t { MEB, MVI, MIL, MeltdownContrast, Benign };
const char* attack_class_name(AttackClass c);

struct Fixture {
  std::string name;
  std::string source;
  Microprogram prog;
  std::string macro_signature;
  MacroBinding default_binding;
  AttackClass expected_class = AttackClass::Benign;
  int expected_findings = 0;
};

struct UnknownFixtureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::vector<std::string>& fixture_names();
std::filesystem::path corpus_dir();
Fixture load_fixture(const std::string& name);
Scenario load_corpus_scenario(const std::string& scen_name);  // "<name>.scen"

// Macro-op wrapping a fixture's microprogram. The Microprogram must outlive
// the MacroOp (keep the Fixture alive).
MacroOp macro_of(const Fixture& f);
MacroOp macro_of(const Fixture& f, MacroBinding bind);
MacroOp macro_from_prog(const std::string& mnemonic, const Microprogram* prog,
                        MacroBinding bind);

// ----------------------------------------------------------------- drivers

// Shared driver memory layout
inline constexpr uint64_t kTransmitArrayBase = 0x1000000;
inline constexpr uint64_t kTransmitStride = 512;
inline constexpr unsigned kTransmitBuckets = 256;
inline constexpr uint64_t kSlotAddr = 0x500000;  // slow-resolving operand
inline constexpr uint64_t kBufBase = 0x700000;   // out-of-bounds data region

enum class DriverPattern : uint8_t { Meb1, Meb2, Mvi, Mil, Pcidx };

struct DriverParams {
  std::optional<MacroOp> victim;
  RegisterId expose{RegClass::IntArch, 0};  // register the transmit reads
  bool combine_rdx = false;                 // rsi = (rdx << 32) | expose
  int byte_sel = 0;
  uint64_t transmit_base = kTransmitArrayBase;
  std::optional<RegisterId> index_reg;  // Meb2: buf index register
  uint64_t buf_base = kBufBase;
  std::optional<RegisterId> slow_reg;   // loaded from kSlotAddr first
  std::optional<uint64_t> transmit_abs; // transmit a fixed byte location
};

struct UnboundParamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

MacroProgram attack_driver(DriverPattern p, const DriverParams& prm);

// --------------------------------------------------------- attack registry

struct AttackOptions {
  int byte_sel = 0;
  uint16_t creg = 0x2290;  // pcidx target control register
  bool hardened = false;   // caller supplies the hardened program
};

struct AttackSetup {
  std::string fixture_name;
  // victim microprogram actually run; shared_ptr keeps the address stable
  std::shared_ptr<Microprogram> victim;
  Scenario scenario;
  MacroProgram program;
  uint64_t transmit_base = kTransmitArrayBase;
  uint64_t stride = kTransmitStride;
  unsigned buckets = kTransmitBuckets;
  uint64_t expected_value = 0;  // planted/derived ground truth, 0 if n/a
  bool expect_event = false;
};

const std::vector<std::string>& attack_names();
AttackSetup build_attack(const std::string& name, const AttackOptions& opt,
                         const Microprogram* victim_override = nullptr);

// Comma-separated run streams for the CLI: each element is a fixture name or
// one of the builtins "lfence" / "nop".
struct RunStream {
  std::vector<std::shared_ptr<Microprogram>> progs;
  MacroProgram program;
};
RunStream build_run_stream(const std::string& list, int reps);

}  // namespace ucsim
