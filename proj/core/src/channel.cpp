#include "ucsim/channel.hpp"

#include <algorithm>
#include <sstream>

#include "ucsim/pipeline.hpp"
#include "ucsim/scenario.hpp"

namespace ucsim {

ProbeResult probe_recover(CacheModel& cache, uint64_t base, uint64_t stride,
                          unsigned buckets) {
  ProbeResult r;
  for (unsigned i = 0; i < buckets; ++i) {
    bool hit = cache.timed_access(base + i * stride) == cache.hit_latency;
    if (hit) r.hits.push_back(i);
  }
  if (r.hits.empty()) {
    r.status = ProbeResult::Status::NoSignal;
  } else if (r.hits.size() > 1) {
    r.status = ProbeResult::Status::Ambiguous;
  } else {
    r.status = ProbeResult::Status::Ok;
    r.index = r.hits[0];
  }
  return r;
}

std::string LeakReport::to_string(const LabelRegistry& reg) const {
  std::ostringstream os;
  bool first = true;
  for (uint16_t id : labels) {
    if (!first) os << ",";
    os << reg.get(id).str();
    first = false;
  }
  return os.str();
}

LeakReport taint_oracle(const PipelineTrace& trace, const LabelRegistry& reg,
                        const Scenario& sc) {
  LeakReport out;
  auto report = [&](const TaintSet& t, const LeakWitness& w) {
    bool any = false;
    for (uint16_t id : t.ids) {
      if (reg.get(id).secrecy != Secrecy::Secret) continue;
      any = true;
      if (!std::binary_search(out.labels.begin(), out.labels.end(), id))
        out.labels.insert(
            std::lower_bound(out.labels.begin(), out.labels.end(), id), id);
    }
    if (any) out.witnesses.push_back(w);
  };

  // transient memory accesses whose address depends on a secret
  for (const auto& t : trace.touches) {
    if (!t.transient) continue;
    report(t.addr_taint,
           LeakWitness{t.uop, true, t.addr, t.addr_taint});
  }
  // transient branches steered by a secret predicate
  for (const auto& b : trace.branches) {
    if (!b.transient) continue;
    report(b.pred_taint, LeakWitness{b.uop, true, 0, b.pred_taint});
  }
  // architectural accesses the scenario declares unauthorized
  for (const auto& t : trace.touches) {
    if (t.transient) continue;
    TaintSet hits;
    for (uint16_t id : sc.unauthorized)
      if (t.addr_taint.contains(id) || t.data_taint.contains(id))
        hits.add(id);
    if (!hits.empty())
      report(hits, LeakWitness{t.uop, false, t.addr, hits});
  }
  return out;
}

}  // namespace ucsim
