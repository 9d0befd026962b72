// ucsim: micro-assembler and disassembler
//
// Line-oriented text format, one statement per line:
//   label:                  labels end with ':' and force triad alignment
//   dst = OP(src, ...)      destination on the left
//   OP(args...)             statements without a destination
//   SEQW NAME               sequence word for the triad of the preceding uop
//   SEQW GOTO label
//   // comment

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "ucsim/uisa.hpp"

namespace ucsim {

struct SourceUnit {
  std::string name;  // program name (used as Microprogram::name)
  std::string text;
};

struct AsmError : std::runtime_error {
  int line;
  AsmError(int line_, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line_) + ": " + msg),
        line(line_) {}
};

Microprogram assemble(const SourceUnit& src);
Microprogram assemble_text(const std::string& name, std::string_view text);

// Canonical text: stable under reassembly; padding uops are not printed.
std::string disassemble(const Microprogram& p);

}  // namespace ucsim
