#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbf/builders.hpp"
#include "cbf/decompose.hpp"
#include "cbf/policy.hpp"
#include "cbf/synthesis.hpp"
#include "cbf/verify.hpp"

namespace cbf::cli {

namespace fs = std::filesystem;

// Exit code contract: 0 pass, 1 verification failure, 2 configuration error,
// 3 synthesis failure.
enum ExitCode : int { kPass = 0, kVerificationFailure = 1, kConfigError = 2, kSynthesisFailure = 3 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Project {
  fs::path dir;            // directory of the config file (paths resolve against it)
  nlohmann::json json;
  fs::path out;

  fs::path resolve(const std::string& rel) const {
    fs::path p(rel);
    return p.is_absolute() ? p : dir / p;
  }
};

inline nlohmann::json load_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open '" + p.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("malformed json in '" + p.string() + "': " + e.what());
  }
}

inline Project load_project(const std::string& config_path, const std::string& out_override) {
  Project p;
  fs::path cp(config_path);
  p.dir = cp.has_parent_path() ? cp.parent_path() : fs::path(".");
  p.json = load_json(cp);
  std::string out = out_override.empty() ? p.json.value("out", std::string("out")) : out_override;
  p.out = fs::path(out).is_absolute() ? fs::path(out) : p.dir / out;
  return p;
}

inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << content;
}

struct BuiltProject {
  Automaton automaton;            // as loaded (co-Buchi or Buchi)
  InterconnectedSystem system;
  LabelingFunction labeling;
  WiringKind wiring = WiringKind::Custom;
  std::size_t n = 0;
  bool has_system = false;
};

inline BuiltProject build_project(const Project& p, std::size_t n_override = 0) {
  BuiltProject b;
  if (!p.json.contains("automaton")) throw ConfigError("config: missing 'automaton'");
  b.automaton = automaton_from_json(load_json(p.resolve(p.json["automaton"].get<std::string>())));

  if (!p.json.contains("system")) return b;
  const auto& js = p.json["system"];
  if (js.contains("builder")) {
    std::string kind = js["builder"].get<std::string>();
    std::size_t n = n_override ? n_override : js.value("n", 3u);
    b.n = n;
    if (kind == "rooms") {
      RoomParams rp;
      auto net = build_room_network(n, rp);
      b.system = std::move(net.system);
      b.labeling = std::move(net.labeling);
      b.wiring = WiringKind::Ring;
    } else if (kind == "kuramoto") {
      KuramotoParams kp;
      auto net = build_kuramoto_network(n, kp);
      b.system = std::move(net.system);
      b.labeling = std::move(net.labeling);
      b.wiring = WiringKind::All;
    } else {
      throw ConfigError("config: unknown builder '" + kind + "'");
    }
  } else if (js.contains("custom")) {
    b.system = system_from_json(load_json(p.resolve(js["custom"].get<std::string>())));
    b.n = b.system.blocks();
    if (!js.contains("labeling")) throw ConfigError("config: custom systems need a 'labeling' file");
    b.labeling = LabelingFunction::from_json(load_json(p.resolve(js["labeling"].get<std::string>())));
    std::string wk = js.value("wiring_kind", "custom");
    b.wiring = wk == "ring" ? WiringKind::Ring : wk == "all" ? WiringKind::All : wk == "none" ? WiringKind::None
                                                                                              : WiringKind::Custom;
  } else {
    throw ConfigError("config: 'system' needs 'builder' or 'custom'");
  }
  b.has_system = true;
  return b;
}

struct CertificateEntry {
  PartitionKey key;
  LocalCertificate certificate;
  std::string path;
};

inline std::vector<CertificateEntry> load_certificates(const Project& p, const BuiltProject& b,
                                                       const Automaton& buchi) {
  std::vector<CertificateEntry> out;
  if (!p.json.contains("certificates")) return out;
  for (const auto& jc : p.json["certificates"]) {
    CertificateEntry e;
    e.path = jc.at("path").get<std::string>();
    std::size_t wdim = b.has_system ? b.system.sub(0).internal_dim : 0;
    e.certificate = certificate_from_json(load_json(p.resolve(e.path)), wdim);
    const auto& jk = jc.at("partition");
    int q = buchi.state(jk.at("q").get<std::string>());
    int q1 = buchi.state(jk.at("via").get<std::string>());
    e.key = PartitionKey{q, q1, buchi.successors(q1)};
    out.push_back(std::move(e));
  }
  return out;
}

inline GridSpec grid_from_config(const nlohmann::json& v) {
  GridSpec g;
  g.x_step = v.value("grid_step", g.x_step);
  g.w_step = v.value("w_step", g.w_step);
  g.tolerance = v.value("tolerance", g.tolerance);
  g.boundary_offset = v.value("boundary_offset", g.boundary_offset);
  g.strict_slack = v.value("strict_slack", g.strict_slack);
  if (v.contains("lipschitz")) g.lipschitz = v["lipschitz"].get<double>();
  if (v.contains("conditions")) g.conditions = v["conditions"].get<std::vector<std::string>>();
  if (v.contains("w_mode"))
    g.w_mode = v["w_mode"].get<std::string>() == "reference" ? GridSpec::WMode::Reference : GridSpec::WMode::Grid;
  if (v.contains("decrease_domain"))
    g.decrease_domain = v["decrease_domain"].get<std::string>() == "region-a" ? GridSpec::XDomain::RegionA
                                                                              : GridSpec::XDomain::StateRegion;
  if (v.contains("w_reference")) g.w_reference = v["w_reference"].get<std::vector<double>>();
  return g;
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

inline int cmd_decompose(const Project& p, std::size_t n_override) {
  BuiltProject b = build_project(p, n_override);
  const LabelingFunction* lab = b.has_system ? &b.labeling : nullptr;
  Decomposition d = decompose(b.automaton, lab);
  const Automaton& a = d.buchi;

  write_file(p.out / "decomposition.json", to_json(d).dump(2) + "\n");
  write_file(p.out / "switching.json", to_json(d.switching).dump(2) + "\n");
  write_file(p.out / "automaton.dot", to_dot(a));
  write_file(p.out / "switching.dot", to_dot(d.switching));

  std::cout << "fragments: " << d.fragments.size() << "\n";
  for (const auto& [t, ok] : d.triplet_feasibility)
    std::cout << "  triplet (" << a.state_name(t.q) << "," << a.state_name(t.q1) << "," << a.state_name(t.q2) << ") "
              << (ok ? "feasible" : "infeasible (source and target regions intersect)") << "\n";
  if (!d.obligations.empty()) {
    std::cout << "certificate obligations:\n";
    for (const auto& k : d.obligations) std::cout << "  " << partition_key_str(k, a) << "\n";
  }
  for (int pr : d.uncoverable_props)
    std::cout << "note: starts labeled '" << a.prop_name(pr) << "' cannot be covered by any certificate\n";
  std::cout << "wrote " << (p.out / "decomposition.json").string() << "\n";
  return kPass;
}

// ---------------------------------------------------------------------------
// check-smallgain / verify
// ---------------------------------------------------------------------------

struct GainSummary {
  GainMatrix matrix;       // representative matrix (small n)
  SmallGainReport report;
  PhiResult phis;
  double offdiag_coeff = 0.0;  // when linear and uniform
};

inline GainSummary summarize_gains(const LocalCertificate& cert, const BuiltProject& b) {
  GainSummary s;
  std::size_t rep_n = std::min<std::size_t>(b.n ? b.n : 2, 4);
  std::vector<LocalCertificate> locals(rep_n, cert);
  auto wired = rep_n == b.n ? wired_predicate(b.wiring, b.n)
                            : wired_predicate(b.wiring == WiringKind::None ? b.wiring : WiringKind::All, rep_n);
  s.matrix = gamma_matrix(locals, wired);
  s.report = check_small_gain_report(s.matrix);
  s.phis = find_phi(s.matrix);
  for (const auto& [ij, f] : s.matrix.entries)
    if (ij.first != ij.second && f.is_linear() && !f.is_identity()) s.offdiag_coeff = f.coeff();
  return s;
}

inline int cmd_check_smallgain(const Project& p) {
  BuiltProject b = build_project(p);
  Automaton buchi = b.automaton.acceptance() == Acceptance::CoBuchi ? complement_to_buchi(b.automaton) : b.automaton;
  auto certs = load_certificates(p, b, buchi);
  if (certs.empty()) throw ConfigError("config: no certificates to check");
  bool all_ok = true;
  nlohmann::ordered_json report;
  for (const auto& e : certs) {
    GainSummary s = summarize_gains(e.certificate, b);
    nlohmann::ordered_json je;
    je["certificate"] = e.path;
    je["partition"] = partition_key_str(e.key, buchi);
    je["internal_gain_coefficient"] = s.offdiag_coeff;
    je["small_gain"] = s.report.ok;
    je["hairline_slack"] = s.report.hairline;
    if (!s.report.ok) je["failure"] = s.report.failure;
    if (s.phis.ok) {
      nlohmann::json jp = nlohmann::json::array();
      for (const auto& f : s.phis.phis) jp.push_back(to_json(f));
      je["phi"] = jp;
    }
    report["certificates"].push_back(je);
    std::cout << (s.report.ok ? "[pass] " : "[FAIL] ") << e.path << "  gamma_ij ~ " << s.offdiag_coeff
              << (s.report.hairline ? "  (hairline slack)" : "") << "\n";
    all_ok = all_ok && s.report.ok;
  }
  write_file(p.out / "smallgain.json", report.dump(2) + "\n");
  return all_ok ? kPass : kVerificationFailure;
}

inline int cmd_verify(const Project& p, double grid_override) {
  BuiltProject b = build_project(p);
  if (!b.has_system) throw ConfigError("config: 'verify' needs a system");
  Automaton buchi = b.automaton.acceptance() == Acceptance::CoBuchi ? complement_to_buchi(b.automaton) : b.automaton;
  auto certs = load_certificates(p, b, buchi);
  if (certs.empty()) throw ConfigError("config: no certificates to verify");

  GridSpec grid = grid_from_config(p.json.value("verification", nlohmann::json::object()));
  if (grid_override > 0) grid.x_step = grid_override;
  auto vcfg = p.json.value("verification", nlohmann::json::object());
  std::size_t samples = vcfg.value("samples", 1000u);
  double dec_tol = vcfg.value("decrease_tolerance", 1e-6);
  unsigned long long seed = vcfg.value("seed", 1ull);

  bool all_ok = true;
  std::string failed_stage;
  nlohmann::ordered_json out;
  for (const auto& e : certs) {
    nlohmann::ordered_json je;
    je["certificate"] = e.path;
    je["partition"] = partition_key_str(e.key, buchi);
    std::cout << "verify " << e.path << " (" << partition_key_str(e.key, buchi) << ")\n";

    VerificationReport local = verify_local(e.certificate, b.system.sub(0), grid);
    je["local"] = to_json(local);
    std::cout << to_text(local);
    if (!local.pass()) {
      all_ok = false;
      if (failed_stage.empty()) failed_stage = "local-conditions";
    }

    GainSummary gains = summarize_gains(e.certificate, b);
    je["small_gain"] = gains.report.ok;
    je["internal_gain_coefficient"] = gains.offdiag_coeff;
    std::cout << "  gamma_ij ~ " << gains.offdiag_coeff << "  small-gain "
              << (gains.report.ok ? "holds" : ("fails: " + gains.report.failure))
              << (gains.report.hairline ? " (hairline slack)" : "") << "\n";
    if (!gains.report.ok || !gains.phis.ok) {
      all_ok = false;
      if (failed_stage.empty()) failed_stage = gains.report.ok ? "phi-search" : "small-gain";
      out["certificates"].push_back(je);
      continue;
    }

    try {
      ComposedCertificate comp = compose_certificates_homogeneous(e.certificate, gains.phis.phis.front(), b.n, b.wiring);
      je["eps1"] = comp.eps1;
      je["eps2"] = comp.eps2;
      if (e.certificate.controller && samples > 0) {
        const Controller& ctl = *e.certificate.controller;
        auto policy = [&](std::span<const double> x) {
          std::vector<double> u(b.system.input_dim());
          std::size_t off = 0;
          for (std::size_t i = 0; i < b.system.blocks(); ++i) {
            auto ui = ctl.eval(b.system.sub(i), b.system.block(x, i));
            for (double v : ui) u[off++] = v;
          }
          return u;
        };
        VerificationReport dec = check_decrease_composed(comp, b.system, policy, samples, seed, dec_tol);
        je["composed_decrease"] = to_json(dec);
        std::cout << to_text(dec);
        if (!dec.pass()) {
          all_ok = false;
          if (failed_stage.empty()) failed_stage = "composed-decrease";
        }
      }
    } catch (const SmallGainError& ex) {
      all_ok = false;
      if (failed_stage.empty()) failed_stage = "small-gain";
      je["compose_error"] = ex.what();
    } catch (const LevelConditionError& ex) {
      all_ok = false;
      if (failed_stage.empty()) failed_stage = "level-condition";
      je["compose_error"] = ex.what();
    }
    out["certificates"].push_back(je);
  }
  write_file(p.out / "verify.json", out.dump(2) + "\n");
  if (!all_ok) {
    std::cout << "verification failed at stage: " << failed_stage << "\n";
    return kVerificationFailure;
  }
  std::cout << "all certificates verified\n";
  return kPass;
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

inline int cmd_synthesize(const Project& p) {
  BuiltProject b = build_project(p);
  if (!b.has_system) throw ConfigError("config: 'synthesize' needs a system");
  if (!p.json.contains("synthesis")) throw ConfigError("config: missing 'synthesis'");
  const auto& js = p.json["synthesis"];

  BarrierTemplate tmpl = template_from_json(js.at("template"));
  CegisConfig cfg = js.contains("cegis") ? cegis_config_from_json(js["cegis"]) : CegisConfig{};
  std::vector<double> u_set = js.at("u_set").get<std::vector<double>>();

  const Subsystem& sub = b.system.sub(0);
  SynthesisRegions regions;
  std::size_t dim = sub.state_dim;
  regions.state_region = js.contains("state_region") ? region_from_json(js["state_region"], dim) : sub.state_region;
  regions.internal_region =
      js.contains("internal_region") ? region_from_json(js["internal_region"], sub.internal_dim) : sub.internal_region;
  regions.region_a = region_from_json(js.at("region_a"), dim);
  regions.region_b = region_from_json(js.at("region_b"), dim);

  SynthesisResult res = synthesize_cegis(tmpl, sub, regions, u_set, cfg);
  {
    std::ostringstream os;
    write_synthesis_log_csv(res.log, os);
    write_file(p.out / "synthesis_log.csv", os.str());
  }
  if (!res.ok) {
    std::cout << "synthesis failed: " << res.failure << "\n";
    if (!res.counterexamples.empty()) {
      std::cout << "  counterexamples kept: " << res.counterexamples.size() << ", best remaining violation "
                << res.best_violation << "\n";
    }
    return kSynthesisFailure;
  }
  write_file(p.out / "certificate.json", to_json(res.certificate).dump(2) + "\n");
  std::cout << "synthesized certificate written to " << (p.out / "certificate.json").string() << "\n";
  std::cout << to_text(res.final_report);
  return kPass;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline std::vector<double> sample_x0(const nlohmann::json& jx, const BuiltProject& b, std::mt19937_64& rng) {
  std::size_t dim = b.system.state_dim();
  if (jx.contains("values")) {
    auto v = jx["values"].get<std::vector<double>>();
    if (v.size() != dim) throw ConfigError("simulation: x0 'values' has wrong dimension");
    return v;
  }
  if (jx.contains("fill")) return std::vector<double>(dim, jx["fill"].get<double>());
  if (jx.contains("prop")) {
    auto reg = b.labeling.region_of(jx["prop"].get<std::string>());
    if (!reg) throw ConfigError("simulation: cannot sample from the remainder region");
    const Box& box = reg->boxes[rng() % reg->boxes.size()];
    std::vector<double> x(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      std::uniform_real_distribution<double> u(box.lo[d], box.hi[d]);
      x[d] = u(rng);
    }
    return x;
  }
  throw ConfigError("simulation: x0 needs 'values', 'fill' or 'prop'");
}

inline int cmd_simulate(const Project& p, std::size_t n_override, std::size_t horizon_override,
                        unsigned long long seed_override) {
  BuiltProject b = build_project(p, n_override);
  if (!b.has_system) throw ConfigError("config: 'simulate' needs a system");
  const auto& jsim = p.json.contains("simulation") ? p.json["simulation"] : nlohmann::json::object();
  std::size_t horizon = horizon_override ? horizon_override : jsim.value("horizon", 100u);
  if (horizon < 1) throw ConfigError("simulation: horizon must be >= 1");
  std::size_t runs = jsim.value("runs", 1u);
  unsigned long long seed = seed_override ? seed_override : jsim.value("seed", 1ull);
  bool full_state = jsim.value("dump_full_state", false);

  Decomposition d = decompose(b.automaton, &b.labeling);
  auto certs = load_certificates(p, b, d.buchi);

  Controller fallback;
  if (p.json.contains("fallback")) fallback = controller_from_json(p.json["fallback"]);
  HybridPolicy policy(d.switching, fallback, jsim.value("inherit_self_loops", true));
  for (const auto& e : certs) {
    if (!e.certificate.controller) throw ConfigError("simulate: certificate '" + e.path + "' carries no controller");
    policy.bind(e.key, {*e.certificate.controller});
  }
  for (const auto& k : policy.unbound_obligations(d))
    std::cout << "note: obligation " << partition_key_str(k, d.buchi) << " has no bound controller (fallback)\n";

  std::optional<ComposedCertificate> composed;
  if (!certs.empty() && jsim.value("with_barrier", true)) {
    GainSummary gains = summarize_gains(certs.front().certificate, b);
    if (gains.report.ok && gains.phis.ok)
      composed = compose_certificates_homogeneous(certs.front().certificate, gains.phis.phis.front(), b.n, b.wiring);
  }

  if (!jsim.contains("x0")) throw ConfigError("simulation: missing 'x0'");
  std::mt19937_64 rng(seed);
  bool all_pass = true;
  nlohmann::ordered_json summary;
  summary["runs"] = nlohmann::json::array();
  for (std::size_t r = 0; r < runs; ++r) {
    std::vector<double> x0 = sample_x0(jsim["x0"], b, rng);
    Trace t = simulate(b.system, policy, b.labeling, std::move(x0), horizon, composed ? &*composed : nullptr);
    MonitorReport mon = monitor_trace(t, d.buchi);
    all_pass = all_pass && mon.pass;

    std::string tag = runs == 1 ? "" : "_" + std::to_string(r);
    {
      std::ostringstream os;
      write_trace_csv(t, policy.switching(), os, full_state);
      write_file(p.out / ("trace" + tag + ".csv"), os.str());
    }
    {
      std::ostringstream os;
      write_envelope_csv(t, os);
      write_file(p.out / ("envelope" + tag + ".csv"), os.str());
    }
    write_file(p.out / ("monitor" + tag + ".json"), to_json(mon).dump(2) + "\n");

    nlohmann::ordered_json jr;
    jr["run"] = r;
    jr["monitor_pass"] = mon.pass;
    jr["fallback_steps"] = t.fallback_steps.size();
    if (!t.barrier_values.empty()) {
      double bmax = -std::numeric_limits<double>::infinity();
      for (double v : t.barrier_values) bmax = std::max(bmax, v);
      jr["max_barrier"] = bmax;
    }
    summary["runs"].push_back(jr);
  }
  summary["all_pass"] = all_pass;
  if (composed) {
    summary["eps1"] = composed->eps1;
    summary["eps2"] = composed->eps2;
  }
  write_file(p.out / "simulation.json", summary.dump(2) + "\n");
  std::cout << (all_pass ? "all runs satisfy the monitor\n" : "monitor reported final-state visits\n");
  return all_pass ? kPass : kVerificationFailure;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args) {
  CLI::App app{"compositional barrier-certificate toolkit"};
  app.require_subcommand(1);

  std::string config, out;
  double grid_resolution = 0.0;
  std::size_t n = 0, horizon = 0;
  unsigned long long seed = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "project config json")->required();
    cmd->add_option("--out", out, "output directory (overrides config)");
  };
  CLI::App* dec = app.add_subcommand("decompose", "decompose a specification into reachability obligations");
  add_common(dec);
  dec->add_option("--n", n, "override network size");
  CLI::App* sg = app.add_subcommand("check-smallgain", "check the small-gain condition for the certificates");
  add_common(sg);
  CLI::App* ver = app.add_subcommand("verify", "verify local certificates and their composition");
  add_common(ver);
  ver->add_option("--grid-resolution", grid_resolution, "override the verification grid step");
  CLI::App* syn = app.add_subcommand("synthesize", "search for a local certificate");
  add_common(syn);
  CLI::App* sim = app.add_subcommand("simulate", "closed-loop rollout, monitor and envelope");
  add_common(sim);
  sim->add_option("--n", n, "override network size");
  sim->add_option("--horizon", horizon, "override horizon");
  sim->add_option("--seed", seed, "override seed");

  std::vector<const char*> argv;
  argv.push_back("cbfctl");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kPass : kConfigError;
  }

  try {
    Project p = load_project(config, out);
    fs::create_directories(p.out);
    if (dec->parsed()) return cmd_decompose(p, n);
    if (sg->parsed()) return cmd_check_smallgain(p);
    if (ver->parsed()) return cmd_verify(p, grid_resolution);
    if (syn->parsed()) return cmd_synthesize(p);
    if (sim->parsed()) return cmd_simulate(p, n, horizon, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerificationFailure;
  }
  return kConfigError;
}

}  // namespace cbf::cli
