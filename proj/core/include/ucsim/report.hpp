// ucsim: structured run reports
//
// Line-oriented "key: value" output with stable key order, plus a flat
// machine-readable rendering of the same keys. Exit status of the CLI is
// derived from the verdict.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ucsim/channel.hpp"
#include "ucsim/pipeline.hpp"

namespace ucsim {

struct RunReport {
  std::vector<std::pair<std::string, std::string>> kv;
  bool has_verdict = false;
  bool pass = true;

  void add(const std::string& key, const std::string& value);
  void add_u64(const std::string& key, uint64_t value);
  void add_hex(const std::string& key, uint64_t value);
  void verdict(bool ok);

  std::string render() const;       // "key: value" lines
  std::string render_flat() const;  // single-line {"k":"v",...}
};

void add_counters(RunReport& r, const PerfCounters& c);
void add_config(RunReport& r, const SimConfig& c);
void add_leaks(RunReport& r, const LeakReport& leaks, const LabelRegistry& reg);

}  // namespace ucsim
