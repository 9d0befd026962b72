#include "ucsim/report.hpp"

#include <sstream>

namespace ucsim {

void RunReport::add(const std::string& key, const std::string& value) {
  kv.emplace_back(key, value);
}

void RunReport::add_u64(const std::string& key, uint64_t value) {
  add(key, std::to_string(value));
}

void RunReport::add_hex(const std::string& key, uint64_t value) {
  std::ostringstream os;
  os << "0x" << std::hex << value;
  add(key, os.str());
}

void RunReport::verdict(bool ok) {
  has_verdict = true;
  pass = pass && ok;
}

std::string RunReport::render() const {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << ": " << v << "\n";
  if (has_verdict) os << "verdict: " << (pass ? "pass" : "fail") << "\n";
  return os.str();
}

std::string RunReport::render_flat() const {
  std::ostringstream os;
  os << "{";
  bool first = true;
  for (const auto& [k, v] : kv) {
    if (!first) os << ",";
    os << "\"" << k << "\":\"" << v << "\"";
    first = false;
  }
  if (has_verdict) {
    if (!first) os << ",";
    os << "\"verdict\":\"" << (pass ? "pass" : "fail") << "\"";
  }
  os << "}";
  return os.str();
}

void add_counters(RunReport& r, const PerfCounters& c) {
  r.add_u64("counters.issued", c.uops_issued);
  r.add_u64("counters.retired", c.uops_retired);
  r.add_u64("counters.transient", c.transient_uops());
  r.add_u64("counters.ms_uops", c.ms_uops);
  r.add_u64("counters.macro_ops_retired", c.macro_ops_retired);
  r.add_u64("counters.transient_macro_ops", c.transient_macro_ops);
}

void add_config(RunReport& r, const SimConfig& c) {
  r.add_u64("config.rob", c.rob_size);
  r.add_u64("config.detect_delay", c.detect_delay);
  r.add_u64("config.correction_delay", c.correction_delay);
  r.add_u64("config.cycle_limit", c.cycle_limit);
}

void add_leaks(RunReport& r, const LeakReport& leaks,
               const LabelRegistry& reg) {
  r.add_u64("leak.count", leaks.labels.size());
  r.add("leak.labels", leaks.empty() ? "-" : leaks.to_string(reg));
}

}  // namespace ucsim
