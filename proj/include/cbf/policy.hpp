#pragma once

#include <limits>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbf/automaton.hpp"
#include "cbf/certificate.hpp"
#include "cbf/controller.hpp"
#include "cbf/decompose.hpp"
#include "cbf/system.hpp"
#include "cbf/verify.hpp"

namespace cbf {

// Switching policy: the edge-memory automaton picks which stationary
// controller drives the network. Controllers are keyed by partition; states
// without a mapped controller fall back to a default (free choice). A
// self-loop state (q', q', D) may inherit the controller of the unique
// mapped entry edge (., q', D), which keeps the active certificate's
// controller engaged while the specification state does not advance.
class HybridPolicy {
 public:
  HybridPolicy(SwitchingAutomaton switching, Controller fallback = Controller(), bool inherit_self_loops = true)
      : switching_(std::move(switching)), fallback_(std::move(fallback)), inherit_(inherit_self_loops) {}

  const SwitchingAutomaton& switching() const { return switching_; }
  const Controller& fallback() const { return fallback_; }

  // `controllers` has one entry per subsystem, or a single broadcast entry.
  void bind(const PartitionKey& key, std::vector<Controller> controllers) {
    bound_[key] = std::move(controllers);
  }

  // Controller list for a switching state, after self-loop inheritance;
  // nullptr means the fallback applies.
  const std::vector<Controller>* controllers_for(int mstate) const {
    PartitionKey key = switching_.partition_key(mstate);
    auto it = bound_.find(key);
    if (it != bound_.end()) return &it->second;
    const auto& s = switching_.states()[static_cast<std::size_t>(mstate)];
    if (inherit_ && !s.initial() && s.from == s.q) {
      const std::vector<Controller>* unique = nullptr;
      for (const auto& [k, ctls] : bound_) {
        if (k.q1 == s.q && k.successors == key.successors) {
          if (unique) return nullptr;  // ambiguous: stay on the fallback
          unique = &ctls;
        }
      }
      return unique;
    }
    return nullptr;
  }

  // Certificate obligations that have no bound controller.
  std::vector<PartitionKey> unbound_obligations(const Decomposition& d) const {
    std::vector<PartitionKey> missing;
    for (const auto& k : d.obligations)
      if (!bound_.count(k)) missing.push_back(k);
    return missing;
  }

 private:
  SwitchingAutomaton switching_;
  Controller fallback_;
  bool inherit_;
  std::map<PartitionKey, std::vector<Controller>> bound_;
};

struct PolicyStepResult {
  std::vector<double> input;
  int next_mstate = -1;
  bool used_fallback = false;
};

// rho(x, q_m): advance the switching automaton on L(x) and evaluate the
// controller bound to the successor state.
inline PolicyStepResult policy_step(const HybridPolicy& p, const LabelingFunction& lab,
                                    const InterconnectedSystem& sys, std::span<const double> x, int mstate) {
  const std::string& label = lab.label(x);
  auto nxt = p.switching().step(mstate, label);
  if (!nxt)
    throw std::runtime_error("policy: no switching transition from '" + p.switching().name(mstate) +
                             "' on proposition '" + label + "'");
  PolicyStepResult r;
  r.next_mstate = *nxt;
  const std::vector<Controller>* ctls = p.controllers_for(*nxt);
  r.used_fallback = ctls == nullptr;
  r.input.resize(sys.input_dim());
  std::size_t off = 0;
  for (std::size_t i = 0; i < sys.blocks(); ++i) {
    const Subsystem& s = sys.sub(i);
    const Controller& c = ctls ? (ctls->size() == 1 ? (*ctls)[0] : ctls->at(i)) : p.fallback();
    auto u = c.eval(s, sys.block(x, i));
    for (std::size_t k = 0; k < s.input_dim; ++k) r.input[off + k] = u[k];
    off += s.input_dim;
  }
  return r;
}

struct Trace {
  std::vector<std::vector<double>> states;   // horizon + 1 entries
  std::vector<std::vector<double>> inputs;   // horizon entries
  std::vector<int> switching_states;         // horizon + 1 entries
  std::vector<std::string> labels;           // horizon + 1 entries (label of each state)
  std::vector<double> barrier_values;        // optional, horizon + 1 entries
  std::vector<std::size_t> fallback_steps;   // steps driven by the fallback controller
};

// Synchronous closed-loop rollout under the hybrid policy.
inline Trace simulate(const InterconnectedSystem& sys, const HybridPolicy& p, const LabelingFunction& lab,
                      std::vector<double> x0, std::size_t horizon,
                      const ComposedCertificate* composed = nullptr) {
  if (horizon < 1) throw std::invalid_argument("simulate: horizon must be >= 1");
  if (x0.size() != sys.state_dim()) throw std::invalid_argument("simulate: initial state dimension mismatch");
  if (p.switching().initial().empty()) throw std::runtime_error("simulate: switching automaton has no initial state");

  Trace t;
  t.states.push_back(x0);
  int mstate = p.switching().initial().front();
  t.switching_states.push_back(mstate);

  std::vector<double> x = std::move(x0);
  for (std::size_t k = 0; k < horizon; ++k) {
    t.labels.push_back(lab.label(x));
    if (composed) t.barrier_values.push_back(eval_composed(*composed, x));
    auto step = policy_step(p, lab, sys, x, mstate);
    if (step.used_fallback) t.fallback_steps.push_back(k);
    x = sys.step(x, step.input);
    mstate = step.next_mstate;
    t.states.push_back(x);
    t.inputs.push_back(std::move(step.input));
    t.switching_states.push_back(mstate);
  }
  t.labels.push_back(lab.label(x));
  if (composed) t.barrier_values.push_back(eval_composed(*composed, x));
  return t;
}

struct MonitorReport {
  bool pass = false;
  std::vector<std::string> visited;        // automaton states, length = labels + 1
  std::vector<std::size_t> final_visits;   // indices into `visited` hitting F
  std::size_t horizon = 0;
};

// Runs the Buchi automaton over the trace labels and reports every visit to
// a final state. Zero visits over the horizon is the finite-horizon
// surrogate for avoiding the complemented language.
inline MonitorReport monitor_trace(const Trace& t, const Automaton& a) {
  if (a.acceptance() != Acceptance::Buchi)
    throw std::invalid_argument("monitor_trace expects a Buchi automaton");
  if (a.initial().empty()) throw std::invalid_argument("monitor_trace: automaton has no initial state");
  if (t.labels.empty()) throw std::invalid_argument("monitor_trace: trace carries no labels");
  MonitorReport r;
  r.horizon = t.labels.size() - 1;
  int q = a.initial().front();
  r.visited.push_back(a.state_name(q));
  if (a.is_final(q)) r.final_visits.push_back(0);
  for (std::size_t k = 0; k + 1 < t.labels.size(); ++k) {
    auto nxt = a.step(q, t.labels[k]);
    if (!nxt)
      throw std::runtime_error("monitor: no transition from '" + a.state_name(q) + "' on proposition '" +
                               t.labels[k] + "'");
    q = *nxt;
    r.visited.push_back(a.state_name(q));
    if (a.is_final(q)) r.final_visits.push_back(r.visited.size() - 1);
  }
  r.pass = r.final_visits.empty();
  return r;
}

inline nlohmann::ordered_json to_json(const MonitorReport& r) {
  nlohmann::ordered_json j;
  j["pass"] = r.pass;
  j["finite_horizon_surrogate"] = true;
  j["horizon"] = r.horizon;
  j["final_visits"] = r.final_visits;
  j["visited"] = r.visited;
  return j;
}

// Per-step minimum and maximum over all state coordinates.
inline std::pair<std::vector<double>, std::vector<double>> envelope(const Trace& t) {
  std::vector<double> lo, hi;
  lo.reserve(t.states.size());
  hi.reserve(t.states.size());
  for (const auto& x : t.states) {
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (double v : x) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    lo.push_back(mn);
    hi.push_back(mx);
  }
  return {lo, hi};
}

inline void write_trace_csv(const Trace& t, const SwitchingAutomaton& sw, std::ostream& os, bool full_state = false) {
  os << "step,switching_state,label,min,max";
  if (full_state && !t.states.empty())
    for (std::size_t d = 0; d < t.states[0].size(); ++d) os << ",x" << d;
  os << "\n";
  auto [lo, hi] = envelope(t);
  os.precision(12);
  for (std::size_t k = 0; k < t.states.size(); ++k) {
    os << k << "," << sw.name(t.switching_states[k]) << "," << t.labels[k] << "," << lo[k] << "," << hi[k];
    if (full_state)
      for (double v : t.states[k]) os << "," << v;
    os << "\n";
  }
}

inline void write_envelope_csv(const Trace& t, std::ostream& os) {
  auto [lo, hi] = envelope(t);
  os << "step,min,max\n";
  os.precision(12);
  for (std::size_t k = 0; k < lo.size(); ++k) os << k << "," << lo[k] << "," << hi[k] << "\n";
}

}  // namespace cbf
