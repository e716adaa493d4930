#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cbf {

enum class Acceptance { CoBuchi, Buchi };

constexpr const char* kTrueLabel = "true";

// Propositions attached to one (q, q') state pair. `top` marks a transition
// that fires on every proposition (serialized as "true").
struct EdgeLabel {
  std::vector<int> props;  // sorted proposition ids
  bool top = false;

  bool empty() const { return props.empty() && !top; }
};

// Deterministic omega-automaton over atomic propositions, shared between the
// co-Buchi and Buchi acceptance modes. Transitions are stored per state as an
// explicit proposition map plus an optional catch-all ("true") edge; the
// explicit entry wins when both match.
class Automaton {
 public:
  Automaton() = default;
  Automaton(std::vector<std::string> states, std::vector<std::string> alphabet, Acceptance acc)
      : states_(std::move(states)), alphabet_(std::move(alphabet)), acceptance_(acc) {
    for (std::size_t i = 0; i < states_.size(); ++i) {
      if (!state_index_.emplace(states_[i], static_cast<int>(i)).second)
        throw std::invalid_argument("automaton: duplicate state '" + states_[i] + "'");
    }
    for (std::size_t i = 0; i < alphabet_.size(); ++i) {
      if (alphabet_[i] == kTrueLabel)
        throw std::invalid_argument("automaton: 'true' is reserved and may not appear in the alphabet");
      if (!prop_index_.emplace(alphabet_[i], static_cast<int>(i)).second)
        throw std::invalid_argument("automaton: duplicate proposition '" + alphabet_[i] + "'");
    }
    delta_.resize(states_.size());
    top_edge_.assign(states_.size(), -1);
  }

  std::size_t state_count() const { return states_.size(); }
  const std::vector<std::string>& state_names() const { return states_; }
  const std::vector<std::string>& alphabet() const { return alphabet_; }
  Acceptance acceptance() const { return acceptance_; }
  void set_acceptance(Acceptance a) { acceptance_ = a; }

  int state(const std::string& name) const {
    auto it = state_index_.find(name);
    if (it == state_index_.end()) throw std::invalid_argument("automaton: unknown state '" + name + "'");
    return it->second;
  }
  const std::string& state_name(int q) const { return states_.at(static_cast<std::size_t>(q)); }
  int prop(const std::string& name) const {
    auto it = prop_index_.find(name);
    if (it == prop_index_.end()) throw std::invalid_argument("automaton: unknown proposition '" + name + "'");
    return it->second;
  }
  const std::string& prop_name(int p) const { return alphabet_.at(static_cast<std::size_t>(p)); }

  void set_initial(const std::vector<std::string>& names) {
    initial_.clear();
    for (const auto& n : names) initial_.push_back(state(n));
    std::sort(initial_.begin(), initial_.end());
    initial_.erase(std::unique(initial_.begin(), initial_.end()), initial_.end());
  }
  void set_final(const std::vector<std::string>& names) {
    final_.clear();
    for (const auto& n : names) final_.push_back(state(n));
    std::sort(final_.begin(), final_.end());
    final_.erase(std::unique(final_.begin(), final_.end()), final_.end());
  }
  const std::vector<int>& initial() const { return initial_; }
  const std::vector<int>& final_states() const { return final_; }
  bool is_final(int q) const { return std::binary_search(final_.begin(), final_.end(), q); }

  void add_transition(const std::string& from, const std::vector<std::string>& props, const std::string& to) {
    int f = state(from), t = state(to);
    for (const auto& p : props) {
      if (p == kTrueLabel) {
        if (top_edge_[f] != -1 && top_edge_[f] != t)
          throw std::invalid_argument("automaton: nondeterministic 'true' edge at state '" + from + "'");
        top_edge_[f] = t;
        continue;
      }
      int pid = prop(p);
      auto [it, fresh] = delta_[f].emplace(pid, t);
      if (!fresh && it->second != t)
        throw std::invalid_argument("automaton: nondeterministic transition at (" + from + ", " + p + ")");
    }
  }

  // delta(q, p); the explicit edge wins over the catch-all.
  std::optional<int> step(int q, const std::string& p) const {
    if (p != kTrueLabel) {
      auto it = delta_[q].find(prop(p));
      if (it != delta_[q].end()) return it->second;
    }
    if (top_edge_[q] != -1) return top_edge_[q];
    return std::nullopt;
  }

  // Exact image of delta(q, .) over the alphabet.
  std::vector<int> successors(int q) const {
    if (q < 0 || static_cast<std::size_t>(q) >= states_.size())
      throw std::invalid_argument("automaton: unknown state id");
    std::set<int> out;
    for (const auto& [p, t] : delta_[q]) out.insert(t);
    if (top_edge_[q] != -1 && delta_[q].size() < alphabet_.size() && !alphabet_.empty())
      out.insert(top_edge_[q]);
    return {out.begin(), out.end()};
  }

  EdgeLabel edge_label(int from, int to) const {
    EdgeLabel l;
    for (const auto& [p, t] : delta_[from])
      if (t == to) l.props.push_back(p);
    if (top_edge_[from] == to && delta_[from].size() < alphabet_.size()) l.top = true;
    return l;
  }

  std::vector<std::string> edge_label_names(const EdgeLabel& l) const {
    std::vector<std::string> out;
    for (int p : l.props) out.push_back(prop_name(p));
    if (l.top) out.push_back(kTrueLabel);
    return out;
  }

  void validate() const {
    for (int q0 : initial_)
      if (q0 < 0 || static_cast<std::size_t>(q0) >= states_.size())
        throw std::invalid_argument("automaton: initial state out of range");
    for (int f : final_)
      if (f < 0 || static_cast<std::size_t>(f) >= states_.size())
        throw std::invalid_argument("automaton: final state out of range");
  }

 private:
  std::vector<std::string> states_;
  std::vector<std::string> alphabet_;
  Acceptance acceptance_ = Acceptance::CoBuchi;
  std::vector<int> initial_;
  std::vector<int> final_;
  std::vector<std::map<int, int>> delta_;
  std::vector<int> top_edge_;
  std::map<std::string, int> state_index_;
  std::map<std::string, int> prop_index_;
};

// The complement of a deterministic co-Buchi automaton keeps the whole
// structure and flips the acceptance mode.
inline Automaton complement_to_buchi(const Automaton& a) {
  if (a.acceptance() != Acceptance::CoBuchi)
    throw std::invalid_argument("complement_to_buchi expects a co-Buchi automaton");
  Automaton b = a;
  b.set_acceptance(Acceptance::Buchi);
  return b;
}

// Finite fragment of an accepting lasso: a simple prefix from an initial
// state, a simple loop anchored at a final state, serialized as
// prefix ++ loop ++ loop.front(). No consecutive repeats anywhere except the
// closing pair of a single-state loop.
struct RunFragment {
  std::vector<int> prefix;
  std::vector<int> loop;

  std::vector<int> serialized() const {
    std::vector<int> s = prefix;
    s.insert(s.end(), loop.begin(), loop.end());
    s.push_back(loop.front());
    return s;
  }
};

inline bool operator<(const RunFragment& a, const RunFragment& b) { return a.serialized() < b.serialized(); }
inline bool operator==(const RunFragment& a, const RunFragment& b) {
  return a.prefix == b.prefix && a.loop == b.loop;
}

namespace detail {

// Canonical order: lexicographic on the serialized state-name sequence.
inline bool fragment_name_less(const Automaton& a, const RunFragment& x, const RunFragment& y) {
  auto sx = x.serialized(), sy = y.serialized();
  std::vector<std::string> nx, ny;
  for (int q : sx) nx.push_back(a.state_name(q));
  for (int q : sy) ny.push_back(a.state_name(q));
  return nx < ny;
}

}  // namespace detail

// Enumerates the run fragments of a Buchi automaton: every pairing of a
// simple path from an initial state with a simple cycle through a final
// state, joined by a transition. Single-state loops use the state's
// self-loop. Duplicate-free, canonically ordered.
inline std::vector<RunFragment> compute_run_fragments(const Automaton& a) {
  if (a.acceptance() != Acceptance::Buchi)
    throw std::invalid_argument("compute_run_fragments expects a Buchi automaton");
  std::set<std::vector<int>> seen;
  std::vector<RunFragment> out;

  for (int f : a.final_states()) {
    // Simple cycles anchored at f.
    std::vector<std::vector<int>> loops;
    std::vector<int> path{f};
    std::vector<bool> on_path(a.state_count(), false);
    on_path[static_cast<std::size_t>(f)] = true;
    std::function<void(int)> cycle_dfs = [&](int v) {
      for (int w : a.successors(v)) {
        if (w == f) {
          loops.push_back(path);
        } else if (!on_path[static_cast<std::size_t>(w)]) {
          on_path[static_cast<std::size_t>(w)] = true;
          path.push_back(w);
          cycle_dfs(w);
          path.pop_back();
          on_path[static_cast<std::size_t>(w)] = false;
        }
      }
    };
    cycle_dfs(f);
    if (loops.empty()) continue;

    // Simple paths from initial states whose tip has an edge into f.
    for (int q0 : a.initial()) {
      std::vector<int> pre{q0};
      std::vector<bool> used(a.state_count(), false);
      used[static_cast<std::size_t>(q0)] = true;
      std::function<void(int)> path_dfs = [&](int v) {
        auto succ = a.successors(v);
        if (v != f && std::find(succ.begin(), succ.end(), f) != succ.end()) {
          for (const auto& loop : loops) {
            RunFragment frag{pre, loop};
            if (seen.insert(frag.serialized()).second) out.push_back(frag);
          }
        }
        for (int w : succ) {
          if (w == v || used[static_cast<std::size_t>(w)]) continue;
          used[static_cast<std::size_t>(w)] = true;
          pre.push_back(w);
          path_dfs(w);
          pre.pop_back();
          used[static_cast<std::size_t>(w)] = false;
        }
      };
      path_dfs(q0);
    }
  }

  std::sort(out.begin(), out.end(),
            [&a](const RunFragment& x, const RunFragment& y) { return detail::fragment_name_less(a, x, y); });
  return out;
}

// Fragments keyed by the propositions of their first transition; an edge
// with several propositions fans the fragment out under each of them, and a
// catch-all edge fans out under the whole alphabet.
inline std::map<int, std::vector<RunFragment>> group_by_initial_prop(const std::vector<RunFragment>& frags,
                                                                     const Automaton& a) {
  std::map<int, std::vector<RunFragment>> by_prop;
  for (const auto& fr : frags) {
    auto s = fr.serialized();
    EdgeLabel l = a.edge_label(s[0], s[1]);
    std::vector<int> pids = l.props;
    if (l.top) {
      pids.clear();
      for (std::size_t p = 0; p < a.alphabet().size(); ++p) pids.push_back(static_cast<int>(p));
    }
    for (int p : pids) by_prop[p].push_back(fr);
  }
  return by_prop;
}

// Length-3 window of a run fragment together with its two edge labels.
struct Triplet {
  int q = -1, q1 = -1, q2 = -1;
  EdgeLabel source_label;  // props of (q, q1)
  EdgeLabel target_label;  // props of (q1, q2)
};

inline bool operator<(const Triplet& a, const Triplet& b) {
  return std::tie(a.q, a.q1, a.q2) < std::tie(b.q, b.q1, b.q2);
}
inline bool operator==(const Triplet& a, const Triplet& b) {
  return a.q == b.q && a.q1 == b.q1 && a.q2 == b.q2;
}

inline std::vector<Triplet> extract_triplets(const RunFragment& fr, const Automaton& a) {
  auto s = fr.serialized();
  if (s.size() < 3) throw std::invalid_argument("extract_triplets: fragment shorter than 3 states");
  std::vector<Triplet> out;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) {
    Triplet t;
    t.q = s[i];
    t.q1 = s[i + 1];
    t.q2 = s[i + 2];
    t.source_label = a.edge_label(t.q, t.q1);
    t.target_label = a.edge_label(t.q1, t.q2);
    out.push_back(t);
  }
  return out;
}

// Key of a partition set: the entry edge (q, q') plus the successor set of
// q' (self-loops included).
struct PartitionKey {
  int q = -1, q1 = -1;
  std::vector<int> successors;
};

inline bool operator<(const PartitionKey& a, const PartitionKey& b) {
  return std::tie(a.q, a.q1, a.successors) < std::tie(b.q, b.q1, b.successors);
}
inline bool operator==(const PartitionKey& a, const PartitionKey& b) {
  return a.q == b.q && a.q1 == b.q1 && a.successors == b.successors;
}

struct PartitionBucket {
  PartitionKey key;
  std::vector<Triplet> triplets;   // sorted, unique
  EdgeLabel source_label;          // shared by construction
  EdgeLabel merged_target;         // union over non-self outgoing edges of q'
                                   // plus any self-loop labels reached by a triplet
};

// Triplets sharing the entry edge (q, q') merge into one obligation whose
// unsafe region is the union over the outgoing edges of q' (self-loops only
// contribute when a triplet actually ends in one, i.e. at a lasso tail).
inline std::map<PartitionKey, PartitionBucket> build_partitions(const std::vector<Triplet>& triplets,
                                                                const Automaton& a) {
  std::map<PartitionKey, PartitionBucket> buckets;
  for (const auto& t : triplets) {
    PartitionKey key{t.q, t.q1, a.successors(t.q1)};
    auto& b = buckets[key];
    if (b.triplets.empty()) {
      b.key = key;
      b.source_label = t.source_label;
      std::set<int> props;
      bool top = false;
      for (int s : key.successors) {
        if (s == t.q1) continue;
        EdgeLabel l = a.edge_label(t.q1, s);
        props.insert(l.props.begin(), l.props.end());
        top = top || l.top;
      }
      b.merged_target.props.assign(props.begin(), props.end());
      b.merged_target.top = top;
    }
    if (t.q2 == t.q1) {
      // lasso tail through a self-loop: its label joins the merged target
      EdgeLabel l = a.edge_label(t.q1, t.q1);
      std::set<int> props(b.merged_target.props.begin(), b.merged_target.props.end());
      props.insert(l.props.begin(), l.props.end());
      b.merged_target.props.assign(props.begin(), props.end());
      b.merged_target.top = b.merged_target.top || l.top;
    }
    if (std::find(b.triplets.begin(), b.triplets.end(), t) == b.triplets.end()) b.triplets.push_back(t);
  }
  for (auto& [k, b] : buckets) std::sort(b.triplets.begin(), b.triplets.end());
  return buckets;
}

// Controller-switching automaton: edge-memory states (q, q', Delta(q')) plus
// initial pairs (q0, Delta(q0)); transitions mirror the underlying delta.
class SwitchingAutomaton {
 public:
  struct MState {
    int from = -1;  // -1 marks an initial pair
    int q = -1;
    bool initial() const { return from < 0; }
  };

  explicit SwitchingAutomaton(const Automaton& a) : aut_(a) {}

  const Automaton& underlying() const { return aut_; }
  std::size_t state_count() const { return states_.size(); }
  const std::vector<MState>& states() const { return states_; }
  const std::vector<int>& initial() const { return initial_; }

  int intern(const MState& m) {
    auto key = std::make_pair(m.from, m.q);
    auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(states_.size());
    states_.push_back(m);
    index_.emplace(key, id);
    delta_.emplace_back();
    top_edge_.push_back(-1);
    return id;
  }

  void add_initial(int id) { initial_.push_back(id); }

  void add_transition(int from, const EdgeLabel& l, int to) {
    for (int p : l.props) {
      auto [it, fresh] = delta_[from].emplace(p, to);
      if (!fresh && it->second != to)
        throw std::logic_error("switching automaton: nondeterministic transition");
    }
    if (l.top) {
      if (top_edge_[from] != -1 && top_edge_[from] != to)
        throw std::logic_error("switching automaton: nondeterministic 'true' edge");
      top_edge_[from] = to;
    }
  }

  std::optional<int> step(int m, const std::string& prop) const {
    if (prop != kTrueLabel) {
      auto it = delta_[m].find(aut_.prop(prop));
      if (it != delta_[m].end()) return it->second;
    }
    if (top_edge_[m] != -1) return top_edge_[m];
    return std::nullopt;
  }

  EdgeLabel edge_label(int from, int to) const {
    EdgeLabel l;
    for (const auto& [p, t] : delta_[from])
      if (t == to) l.props.push_back(p);
    if (top_edge_[from] == to) l.top = true;
    return l;
  }

  std::vector<int> out_states(int m) const {
    std::set<int> s;
    for (const auto& [p, t] : delta_[m]) s.insert(t);
    if (top_edge_[m] != -1) s.insert(top_edge_[m]);
    return {s.begin(), s.end()};
  }

  PartitionKey partition_key(int m) const {
    const MState& s = states_[static_cast<std::size_t>(m)];
    return PartitionKey{s.from, s.q, aut_.successors(s.q)};
  }

  std::string name(int m) const {
    const MState& s = states_[static_cast<std::size_t>(m)];
    std::ostringstream os;
    os << "(";
    if (!s.initial()) os << aut_.state_name(s.from) << ",";
    os << aut_.state_name(s.q) << ",{";
    auto succ = aut_.successors(s.q);
    for (std::size_t i = 0; i < succ.size(); ++i) os << (i ? "," : "") << aut_.state_name(succ[i]);
    os << "})";
    return os.str();
  }

 private:
  Automaton aut_;
  std::vector<MState> states_;
  std::vector<int> initial_;
  std::vector<std::map<int, int>> delta_;
  std::vector<int> top_edge_;
  std::map<std::pair<int, int>, int> index_;
};

// Builds the switching automaton, retaining only states reachable from the
// initial pairs.
inline SwitchingAutomaton build_switching_automaton(const Automaton& a) {
  if (a.acceptance() != Acceptance::Buchi)
    throw std::invalid_argument("build_switching_automaton expects a Buchi automaton");
  SwitchingAutomaton m(a);
  std::deque<int> queue;
  for (int q0 : a.initial()) {
    int id = m.intern({-1, q0});
    m.add_initial(id);
    queue.push_back(id);
  }
  std::set<int> done;
  while (!queue.empty()) {
    int cur = queue.front();
    queue.pop_front();
    if (!done.insert(cur).second) continue;
    int q1 = m.states()[static_cast<std::size_t>(cur)].q;
    for (int q2 : a.successors(q1)) {
      EdgeLabel l = a.edge_label(q1, q2);
      if (l.empty()) continue;
      int nxt = m.intern({q1, q2});
      m.add_transition(cur, l, nxt);
      if (!done.count(nxt)) queue.push_back(nxt);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// JSON / DOT
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const Automaton& a) {
  nlohmann::ordered_json j;
  j["states"] = a.state_names();
  j["initial"] = nlohmann::json::array();
  for (int q : a.initial()) j["initial"].push_back(a.state_name(q));
  j["alphabet"] = a.alphabet();
  j["final"] = nlohmann::json::array();
  for (int q : a.final_states()) j["final"].push_back(a.state_name(q));
  j["acceptance"] = a.acceptance() == Acceptance::CoBuchi ? "cobuchi" : "buchi";
  j["transitions"] = nlohmann::json::array();
  for (std::size_t qi = 0; qi < a.state_count(); ++qi) {
    int q = static_cast<int>(qi);
    for (int t : a.successors(q)) {
      EdgeLabel l = a.edge_label(q, t);
      if (l.empty()) continue;
      nlohmann::ordered_json e;
      e["from"] = a.state_name(q);
      e["props"] = a.edge_label_names(l);
      e["to"] = a.state_name(t);
      j["transitions"].push_back(e);
    }
  }
  return j;
}

inline Automaton automaton_from_json(const nlohmann::json& j) {
  Acceptance acc;
  std::string am = j.at("acceptance").get<std::string>();
  if (am == "cobuchi")
    acc = Acceptance::CoBuchi;
  else if (am == "buchi")
    acc = Acceptance::Buchi;
  else
    throw std::invalid_argument("automaton json: acceptance must be 'cobuchi' or 'buchi'");
  Automaton a(j.at("states").get<std::vector<std::string>>(), j.at("alphabet").get<std::vector<std::string>>(), acc);
  a.set_initial(j.at("initial").get<std::vector<std::string>>());
  a.set_final(j.at("final").get<std::vector<std::string>>());
  for (const auto& e : j.at("transitions"))
    a.add_transition(e.at("from").get<std::string>(), e.at("props").get<std::vector<std::string>>(),
                     e.at("to").get<std::string>());
  a.validate();
  return a;
}

namespace detail {
inline std::string join_props(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) s += "|";
    s += names[i];
  }
  return s;
}
}  // namespace detail

inline std::string to_dot(const Automaton& a, const std::string& graph_name = "automaton") {
  std::ostringstream os;
  os << "digraph " << graph_name << " {\n  rankdir=LR;\n";
  for (std::size_t qi = 0; qi < a.state_count(); ++qi) {
    int q = static_cast<int>(qi);
    os << "  \"" << a.state_name(q) << "\" [shape=" << (a.is_final(q) ? "doublecircle" : "circle") << "];\n";
  }
  for (std::size_t i = 0; i < a.initial().size(); ++i) {
    os << "  \"__init" << i << "\" [shape=point];\n";
    os << "  \"__init" << i << "\" -> \"" << a.state_name(a.initial()[i]) << "\";\n";
  }
  for (std::size_t qi = 0; qi < a.state_count(); ++qi) {
    int q = static_cast<int>(qi);
    for (int t : a.successors(q)) {
      EdgeLabel l = a.edge_label(q, t);
      if (l.empty()) continue;
      os << "  \"" << a.state_name(q) << "\" -> \"" << a.state_name(t) << "\" [label=\""
         << detail::join_props(a.edge_label_names(l)) << "\"];\n";
    }
  }
  os << "}\n";
  return os.str();
}

inline nlohmann::ordered_json to_json(const SwitchingAutomaton& m) {
  nlohmann::ordered_json j;
  const Automaton& a = m.underlying();
  j["states"] = nlohmann::json::array();
  for (std::size_t i = 0; i < m.state_count(); ++i) {
    const auto& s = m.states()[i];
    nlohmann::ordered_json js;
    js["name"] = m.name(static_cast<int>(i));
    js["kind"] = s.initial() ? "initial-pair" : "edge";
    if (!s.initial()) js["from"] = a.state_name(s.from);
    js["state"] = a.state_name(s.q);
    nlohmann::ordered_json succ = nlohmann::ordered_json::array();
    for (int t : a.successors(s.q)) succ.push_back(a.state_name(t));
    js["successors"] = succ;
    j["states"].push_back(js);
  }
  j["initial"] = nlohmann::json::array();
  for (int i : m.initial()) j["initial"].push_back(m.name(i));
  j["transitions"] = nlohmann::json::array();
  for (std::size_t i = 0; i < m.state_count(); ++i) {
    for (int t : m.out_states(static_cast<int>(i))) {
      EdgeLabel l = m.edge_label(static_cast<int>(i), t);
      nlohmann::ordered_json e;
      e["from"] = m.name(static_cast<int>(i));
      e["props"] = a.edge_label_names(l);
      e["to"] = m.name(t);
      j["transitions"].push_back(e);
    }
  }
  return j;
}

inline std::string to_dot(const SwitchingAutomaton& m, const std::string& graph_name = "switching") {
  std::ostringstream os;
  const Automaton& a = m.underlying();
  os << "digraph " << graph_name << " {\n  rankdir=LR;\n";
  for (std::size_t i = 0; i < m.state_count(); ++i)
    os << "  \"" << m.name(static_cast<int>(i)) << "\" [shape=box];\n";
  for (std::size_t i = 0; i < m.initial().size(); ++i) {
    os << "  \"__init" << i << "\" [shape=point];\n";
    os << "  \"__init" << i << "\" -> \"" << m.name(m.initial()[i]) << "\";\n";
  }
  for (std::size_t i = 0; i < m.state_count(); ++i) {
    for (int t : m.out_states(static_cast<int>(i))) {
      EdgeLabel l = m.edge_label(static_cast<int>(i), t);
      os << "  \"" << m.name(static_cast<int>(i)) << "\" -> \"" << m.name(t) << "\" [label=\""
         << detail::join_props(a.edge_label_names(l)) << "\"];\n";
    }
  }
  os << "}\n";
  return os.str();
}

}  // namespace cbf
