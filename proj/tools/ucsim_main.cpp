// ucsim command-line driver: assemble, run, attack, scan, harden, report-all.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ucsim/corpus.hpp"
#include "ucsim/refrun.hpp"
#include "ucsim/report.hpp"
#include "ucsim/uasm.hpp"
#include "ucsim/uslh.hpp"

using namespace ucsim;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Scenario resolve_scenario(const std::string& spec) {
  if (spec.empty()) return Scenario{};
  if (spec.find('/') != std::string::npos ||
      (spec.size() > 5 && spec.substr(spec.size() - 5) == ".scen"))
    return load_scenario_file(spec);
  return load_corpus_scenario(spec);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"microcode speculation simulator"};
  app.require_subcommand(1);

  // ---- asm
  std::string asm_input;
  auto* cmd_asm = app.add_subcommand("asm", "assemble and print canonical text");
  cmd_asm->add_option("input", asm_input, "micro-assembly file")->required();

  // ---- run
  std::string run_list, run_scenario, run_config;
  int run_reps = 1;
  bool run_trace = false, run_flat = false;
  int opt_rob = -1, opt_detect = -1;
  auto* cmd_run = app.add_subcommand("run", "simulate a macro-op stream");
  cmd_run->add_option("stream", run_list,
                      "comma list of fixture names (plus lfence/nop)")
      ->required();
  cmd_run->add_option("--scenario", run_scenario, "scenario name or file");
  cmd_run->add_option("--config", run_config, "config file (key = value)");
  cmd_run->add_option("--reps", run_reps, "stream repetitions");
  cmd_run->add_flag("--trace", run_trace, "print the event log");
  cmd_run->add_flag("--flat", run_flat, "machine-readable report");
  cmd_run->add_option("--rob", opt_rob, "reorder buffer size");
  cmd_run->add_option("--detect-delay", opt_detect, "detection delay cycles");

  // ---- attack
  std::string atk_name;
  int atk_byte = 0;
  std::string atk_creg = "0x2290";
  bool atk_hardened = false, atk_sweep = false, atk_trace = false,
       atk_flat = false;
  auto* cmd_attack = app.add_subcommand("attack", "run an attack scenario");
  cmd_attack->add_option("name", atk_name, "attack name")->required();
  cmd_attack->add_option("--byte-sel", atk_byte, "leaked byte index (0..7)");
  cmd_attack->add_option("--creg", atk_creg, "pcidx control-register address");
  cmd_attack->add_flag("--hardened", atk_hardened,
                       "run against the hardened microprogram");
  cmd_attack->add_flag("--sweep", atk_sweep, "recover all eight bytes");
  cmd_attack->add_flag("--trace", atk_trace, "print the event log");
  cmd_attack->add_flag("--flat", atk_flat, "machine-readable report");

  // ---- scan
  std::string scan_fixture, scan_scenario;
  auto* cmd_scan = app.add_subcommand("scan", "classify conditional branches");
  cmd_scan->add_option("fixture", scan_fixture, "fixture name")->required();
  cmd_scan->add_option("--scenario", scan_scenario, "scenario name or file");

  // ---- harden
  std::string hd_fixture, hd_scenario, hd_policy = "taint", hd_out;
  bool hd_no_skip_loops = false;
  auto* cmd_harden = app.add_subcommand("harden", "insert hardening selects");
  cmd_harden->add_option("fixture", hd_fixture, "fixture name")->required();
  cmd_harden->add_option("--scenario", hd_scenario, "scenario name or file");
  cmd_harden->add_option("--policy", hd_policy,
                         "taint | explicit=<addr>:<reg>,...");
  cmd_harden->add_flag("--no-skip-loops", hd_no_skip_loops,
                       "harden inside loop bodies too");
  cmd_harden->add_option("--out", hd_out, "output file (default stdout)");

  // ---- report-all
  bool all_flat = false;
  auto* cmd_all = app.add_subcommand("report-all", "standard fixture battery");
  cmd_all->add_flag("--flat", all_flat, "machine-readable report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_asm) {
      Microprogram p = assemble_text(
          std::filesystem::path(asm_input).stem().string(),
          read_file(asm_input));
      std::cout << disassemble(p);
      return 0;
    }

    if (*cmd_run) {
      Scenario sc = resolve_scenario(run_scenario);
      SimConfig cfg;
      if (!run_config.empty()) {
        Scenario tmp = load_scenario_file(run_config);
        cfg.apply(tmp.config_kv);
      }
      if (opt_rob > 0) cfg.rob_size = opt_rob;
      if (opt_detect >= 0) cfg.detect_delay = opt_detect;
      RunStream rs = build_run_stream(run_list, run_reps);
      CacheModel cache;
      PipelineTrace tr = Simulation::run(rs.program, sc, cfg, cache);
      LeakReport leaks = taint_oracle(tr, *sc.labels, sc);

      RunReport rep;
      rep.add("program", run_list);
      rep.add("scenario", run_scenario.empty() ? "-" : run_scenario);
      rep.add_u64("reps", run_reps);
      add_config(rep, cfg);
      add_counters(rep, tr.counters);
      rep.add_u64("cycles", tr.cycles);
      rep.add("event", tr.arch_event ? tr.arch_event->name : "-");
      rep.add("cycle_limit_hit", tr.cycle_limit_hit ? "yes" : "no");
      add_leaks(rep, leaks, *sc.labels);
      rep.verdict(!tr.cycle_limit_hit);
      std::cout << (run_flat ? rep.render_flat() + "\n" : rep.render());
      if (run_trace) std::cout << tr.render();
      return rep.pass ? 0 : 1;
    }

    if (*cmd_attack) {
      AttackOptions opt;
      opt.byte_sel = atk_byte;
      opt.creg = static_cast<uint16_t>(std::stoul(atk_creg, nullptr, 0));
      RunReport rep;
      rep.add("attack", atk_name);
      rep.add("hardened", atk_hardened ? "yes" : "no");
      bool ok = true;
      uint64_t recovered = 0;
      int lo = atk_sweep ? 0 : atk_byte, hi = atk_sweep ? 7 : atk_byte;
      AttackSetup last;
      for (int b = lo; b <= hi; ++b) {
        opt.byte_sel = b;
        AttackSetup s = build_attack(atk_name, opt);
        if (atk_hardened) {
          Fixture f = load_fixture(s.fixture_name);
          Microprogram hp = harden(f.prog, HardenPolicy{}, s.scenario,
                                   f.default_binding);
          s = build_attack(atk_name, opt, &hp);
        }
        SimConfig cfg;
        CacheModel cache;
        PipelineTrace tr = Simulation::run(s.program, s.scenario, cfg, cache);
        ProbeResult pr =
            probe_recover(cache, s.transmit_base, s.stride, s.buckets);
        uint64_t byte = pr.status == ProbeResult::Status::Ok ? pr.index : 0;
        recovered |= byte << (8 * b);
        std::ostringstream key;
        key << "recovered[" << b << "]";
        rep.add_hex(key.str(), byte);
        uint64_t want = atk_hardened ? 0 : (s.expected_value >> (8 * b)) & 0xFF;
        ok = ok && pr.status == ProbeResult::Status::Ok && byte == want;
        if (b == hi) {
          LeakReport leaks = taint_oracle(tr, *s.scenario.labels, s.scenario);
          add_counters(rep, tr.counters);
          rep.add("event", tr.arch_event ? tr.arch_event->name : "-");
          add_leaks(rep, leaks, *s.scenario.labels);
          if (atk_hardened) ok = ok && leaks.empty();
          if (atk_trace) std::cout << tr.render();
          last = std::move(s);
        }
      }
      rep.add_hex("recovered", recovered);
      rep.add_hex("expected", atk_hardened ? 0
                  : atk_sweep              ? last.expected_value
                  : (last.expected_value >> (8 * atk_byte)) & 0xFF);
      rep.verdict(ok);
      std::cout << (atk_flat ? rep.render_flat() + "\n" : rep.render());
      return rep.pass ? 0 : 1;
    }

    if (*cmd_scan) {
      Fixture f = load_fixture(scan_fixture);
      Scenario sc = resolve_scenario(scan_scenario);
      auto findings = scan(f.prog, sc, f.default_binding);
      RunReport rep;
      rep.add("fixture", scan_fixture);
      rep.add_u64("findings", findings.size());
      int i = 0;
      for (const auto& fd : findings) {
        std::ostringstream k, v;
        k << "finding[" << i++ << "]";
        v << attack_class_name(fd.cls) << " @uaddr " << fd.branch_addr << ": "
          << fd.evidence;
        rep.add(k.str(), v.str());
      }
      std::cout << rep.render();
      return 0;
    }

    if (*cmd_harden) {
      Fixture f = load_fixture(hd_fixture);
      Scenario sc = resolve_scenario(hd_scenario);
      HardenPolicy pol;
      pol.skip_loops = !hd_no_skip_loops;
      if (hd_policy.rfind("explicit=", 0) == 0) {
        pol.taint_guided = false;
        std::istringstream is(hd_policy.substr(9));
        std::string item;
        while (std::getline(is, item, ',')) {
          auto colon = item.find(':');
          if (colon == std::string::npos)
            throw std::runtime_error("bad --policy item '" + item + "'");
          uint32_t addr = std::stoul(item.substr(0, colon));
          auto reg = reg_from_name(item.substr(colon + 1));
          if (!reg) throw std::runtime_error("bad register in --policy");
          pol.explicit_selects[addr].push_back(reg->reg);
        }
      } else if (hd_policy != "taint") {
        throw std::runtime_error("unknown --policy '" + hd_policy + "'");
      }
      Microprogram hp = harden(f.prog, pol, sc, f.default_binding);
      OverheadReport oh = overhead(f.prog, hp);
      std::string text = disassemble(hp);
      if (hd_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(hd_out);
        out << text;
      }
      std::cerr << "uops: " << oh.uops_before << " -> " << oh.uops_after
                << "\n";
      for (const auto& l : oh.loops)
        std::cerr << "loop " << l.label << ": " << l.uops_before << " -> "
                  << l.uops_after << "\n";
      return 0;
    }

    if (*cmd_all) {
      bool all_ok = true;
      for (const auto& name : fixture_names()) {
        Fixture f = load_fixture(name);
        std::string scen;
        if (name == "rdfsbase") scen = "rdfsbase_attack";
        else if (name == "rdgsbase") scen = "rdgsbase_attack";
        else if (name == "xgetbv") scen = "xgetbv_attack";
        else if (name == "rdpmc" || name == "rdpmc_hardened") scen = "rdpmc_pce";
        else if (name == "bound") scen = "bound_attack";
        else if (name == "bndcn") scen = "bndcn_attack";
        else if (name == "div") scen = "div_zdi";
        else if (name == "repne_scasb") scen = "scasb_attack";
        else if (name == "into") scen = "into_of1";
        Scenario sc = scen.empty() ? Scenario{} : load_corpus_scenario(scen);
        auto findings = scan(f.prog, sc, f.default_binding);
        bool ok = static_cast<int>(findings.size()) == f.expected_findings;
        for (const auto& fd : findings)
          ok = ok && fd.cls == f.expected_class;
        std::cout << (ok ? "pass" : "FAIL") << " scan " << name << ": "
                  << findings.size() << " findings, expected "
                  << f.expected_findings << " x "
                  << attack_class_name(f.expected_class) << "\n";
        all_ok = all_ok && ok;
      }
      for (const auto& name : attack_names()) {
        AttackOptions opt;
        AttackSetup s = build_attack(name, opt);
        SimConfig cfg;
        CacheModel cache;
        PipelineTrace tr = Simulation::run(s.program, s.scenario, cfg, cache);
        bool ok = true;
        if (name != "mil-scasb") {
          ProbeResult pr =
              probe_recover(cache, s.transmit_base, s.stride, s.buckets);
          uint64_t want = s.expected_value & 0xFF;
          ok = pr.status == ProbeResult::Status::Ok && pr.index == want;
        } else {
          LeakReport leaks = taint_oracle(tr, *s.scenario.labels, s.scenario);
          ok = !leaks.empty();
        }
        std::cout << (ok ? "pass" : "FAIL") << " attack " << name << "\n";
        all_ok = all_ok && ok;
      }
      return all_ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
