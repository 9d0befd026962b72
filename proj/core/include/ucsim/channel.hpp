// ucsim: cache side channel and leakage oracles
//
// A fully-associative set of line addresses is enough for Flush+Reload:
// only presence/absence matters. Transient accesses update it persistently,
// which is the channel.

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ucsim/machine.hpp"

namespace ucsim {

struct CacheModel {
  unsigned line_size = 64;
  int hit_latency = 4;
  int miss_latency = 40;
  // Lines start cached; a flush removes one until it is re-accessed.
  std::set<uint64_t> flushed;
  std::set<uint64_t> lines;  // re-cached after a flush

  uint64_t line_of(uint64_t addr) const { return addr / line_size; }
  void flush(uint64_t addr) {
    flushed.insert(line_of(addr));
    lines.erase(line_of(addr));
  }
  bool present(uint64_t addr) const {
    uint64_t l = line_of(addr);
    return !flushed.count(l) || lines.count(l);
  }
  // Returns access latency and caches the line.
  int access(uint64_t addr) {
    bool hit = present(addr);
    lines.insert(line_of(addr));
    return hit ? hit_latency : miss_latency;
  }
  int timed_access(uint64_t addr) { return access(addr); }
};

struct ProbeResult {
  enum class Status { Ok, NoSignal, Ambiguous } status = Status::NoSignal;
  uint64_t index = 0;
  std::vector<uint64_t> hits;  // all hit buckets, for diagnostics
};

// Probes base + i*stride for i in [0, buckets); Ok iff exactly one bucket hits.
ProbeResult probe_recover(CacheModel& cache, uint64_t base, uint64_t stride,
                          unsigned buckets);

struct LeakWitness {
  std::string uop;
  bool transient = false;
  uint64_t channel_addr = 0;
  TaintSet taint;
};

struct LeakReport {
  std::vector<uint16_t> labels;  // sorted, unique
  std::vector<LeakWitness> witnesses;
  bool empty() const { return labels.empty(); }
  std::string to_string(const LabelRegistry& reg) const;
};

struct PipelineTrace;  // pipeline.hpp
struct Scenario;       // scenario.hpp

// Reports every secret label that transiently modulated the channel:
// address taints of transient memory accesses, predicates of transient
// branches, plus scenario-declared unauthorized labels seen architecturally.
LeakReport taint_oracle(const PipelineTrace& trace, const LabelRegistry& reg,
                        const Scenario& sc);

}  // namespace ucsim
