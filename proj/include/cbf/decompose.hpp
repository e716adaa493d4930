#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cbf/automaton.hpp"
#include "cbf/labeling.hpp"

namespace cbf {

// Geometry of a set of edge propositions under a labeling function.
struct ResolvedLabel {
  bool whole = false;          // contains the catch-all proposition
  bool includes_else = false;  // contains the labeling's remainder branch
  Region explicit_region;      // union of the explicitly declared regions
};

inline ResolvedLabel resolve_label(const EdgeLabel& l, const Automaton& a, const LabelingFunction& lab) {
  ResolvedLabel r;
  if (l.top) r.whole = true;
  for (int p : l.props) {
    const std::string& name = a.prop_name(p);
    if (!lab.has_prop(name)) throw std::invalid_argument("labeling: no region bound to proposition '" + name + "'");
    if (lab.is_else_prop(name)) {
      r.includes_else = true;
      continue;
    }
    auto reg = lab.region_of(name);
    if (reg) r.explicit_region = r.explicit_region.united(*reg);
  }
  return r;
}

// Do the two resolved label regions intersect? Exact on explicit box unions;
// when the undeclared remainder is involved the answer falls back to the
// conservative side (intersecting), so a certificate obligation is never
// claimed feasible on undecided geometry.
inline bool labels_intersect(const ResolvedLabel& x, const ResolvedLabel& y, const LabelingFunction& lab) {
  auto nonempty = [&lab](const ResolvedLabel& r) {
    if (r.whole) return true;
    if (!r.explicit_region.empty()) return true;
    if (r.includes_else) return lab.remainder_witness().has_value();
    return false;
  };
  if (x.whole) return nonempty(y);
  if (y.whole) return nonempty(x);
  if (x.explicit_region.intersects(y.explicit_region)) return true;
  if (x.includes_else || y.includes_else) {
    // remainder geometry is not materialized; stay conservative unless the
    // other side is empty
    const ResolvedLabel& other = x.includes_else ? y : x;
    if (other.explicit_region.empty() && !other.includes_else) return false;
    return true;
  }
  return false;
}

// A certificate can only exist for (q, q', q'') when the regions of the two
// edge labels are disjoint.
inline bool triplet_feasible(const Triplet& t, const Automaton& a, const LabelingFunction& lab) {
  if (t.source_label.empty() || t.target_label.empty())
    throw std::invalid_argument("triplet_feasible: triplet has an unlabeled edge");
  ResolvedLabel xa = resolve_label(t.source_label, a, lab);
  ResolvedLabel xb = resolve_label(t.target_label, a, lab);
  return !labels_intersect(xa, xb, lab);
}

// Same test against a partition bucket's merged target region.
inline bool bucket_feasible(const PartitionBucket& b, const Automaton& a, const LabelingFunction& lab) {
  ResolvedLabel xa = resolve_label(b.source_label, a, lab);
  ResolvedLabel xb = resolve_label(b.merged_target, a, lab);
  return !labels_intersect(xa, xb, lab);
}

// Full decomposition of one Buchi automaton, with feasibility annotations
// and the (greedy-minimal) set of certificate obligations needed to cover
// every start proposition that is coverable at all.
struct Decomposition {
  Automaton buchi;
  std::vector<RunFragment> fragments;                 // R, canonical order
  std::map<int, std::vector<RunFragment>> by_prop;    // R^p
  std::map<PartitionKey, PartitionBucket> partitions; // mu
  SwitchingAutomaton switching;

  std::map<Triplet, bool> triplet_feasibility;
  std::map<PartitionKey, bool> bucket_feasibility;

  // (prop, fragment index into `fragments`) pairs, and which obligation
  // covers each; -1 when no feasible triplet exists in that fragment.
  struct Coverage {
    int prop;
    std::size_t fragment;
    std::optional<PartitionKey> covered_by;
  };
  std::vector<Coverage> coverage;
  std::vector<PartitionKey> obligations;  // certificates that must be supplied
  std::vector<int> coverable_props;       // props whose every fragment is covered
  std::vector<int> uncoverable_props;
};

inline Decomposition decompose(const Automaton& input, const LabelingFunction* lab = nullptr) {
  Automaton buchi = input.acceptance() == Acceptance::CoBuchi ? complement_to_buchi(input) : input;
  Decomposition d{buchi, {}, {}, {}, build_switching_automaton(buchi)};
  d.fragments = compute_run_fragments(buchi);
  d.by_prop = group_by_initial_prop(d.fragments, buchi);

  std::vector<Triplet> all;
  for (const auto& fr : d.fragments)
    for (const auto& t : extract_triplets(fr, buchi)) all.push_back(t);
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  d.partitions = build_partitions(all, buchi);

  if (!lab) return d;

  for (const auto& t : all) d.triplet_feasibility[t] = triplet_feasible(t, buchi, *lab);
  for (const auto& [k, b] : d.partitions) d.bucket_feasibility[k] = bucket_feasible(b, buchi, *lab);

  // Universe: one entry per (prop, fragment) pair.
  struct Pair {
    int prop;
    std::size_t frag;
    std::set<PartitionKey> candidates;  // feasible buckets containing a triplet of this fragment
  };
  std::vector<Pair> pairs;
  auto frag_index = [&](const RunFragment& fr) {
    for (std::size_t i = 0; i < d.fragments.size(); ++i)
      if (d.fragments[i] == fr) return i;
    throw std::logic_error("fragment not indexed");
  };
  for (const auto& [p, frs] : d.by_prop)
    for (const auto& fr : frs) {
      Pair pr{p, frag_index(fr), {}};
      for (const auto& t : extract_triplets(fr, buchi)) {
        PartitionKey key{t.q, t.q1, buchi.successors(t.q1)};
        if (d.bucket_feasibility.at(key)) pr.candidates.insert(key);
      }
      pairs.push_back(std::move(pr));
    }

  // Greedy cover over the coverable pairs.
  std::set<PartitionKey> chosen;
  std::vector<bool> covered(pairs.size(), false);
  for (;;) {
    std::map<PartitionKey, std::size_t> gain;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (!covered[i])
        for (const auto& k : pairs[i].candidates) ++gain[k];
    PartitionKey best;
    std::size_t best_gain = 0;
    for (const auto& [k, g] : gain)
      if (g > best_gain) {
        best = k;
        best_gain = g;
      }
    if (best_gain == 0) break;
    chosen.insert(best);
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (!covered[i] && pairs[i].candidates.count(best)) covered[i] = true;
  }
  d.obligations.assign(chosen.begin(), chosen.end());

  std::set<int> cov_props, uncov_props;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Decomposition::Coverage c{pairs[i].prop, pairs[i].frag, std::nullopt};
    if (covered[i])
      for (const auto& k : d.obligations)
        if (pairs[i].candidates.count(k)) {
          c.covered_by = k;
          break;
        }
    if (covered[i])
      cov_props.insert(pairs[i].prop);
    else
      uncov_props.insert(pairs[i].prop);
    d.coverage.push_back(std::move(c));
  }
  for (int p : cov_props)
    if (!uncov_props.count(p)) d.coverable_props.push_back(p);
  d.uncoverable_props.assign(uncov_props.begin(), uncov_props.end());
  return d;
}

inline std::string partition_key_str(const PartitionKey& k, const Automaton& a) {
  std::string s = "(" + a.state_name(k.q) + "," + a.state_name(k.q1) + ",{";
  for (std::size_t i = 0; i < k.successors.size(); ++i)
    s += (i ? "," : "") + a.state_name(k.successors[i]);
  return s + "})";
}

inline nlohmann::ordered_json to_json(const Decomposition& d) {
  const Automaton& a = d.buchi;
  nlohmann::ordered_json j;
  auto frag_names = [&](const RunFragment& fr) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (int q : fr.serialized()) arr.push_back(a.state_name(q));
    return arr;
  };
  j["fragments"] = nlohmann::json::array();
  for (const auto& fr : d.fragments) j["fragments"].push_back(frag_names(fr));
  j["fragments_by_prop"] = nlohmann::ordered_json::object();
  for (const auto& [p, frs] : d.by_prop) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& fr : frs) arr.push_back(frag_names(fr));
    j["fragments_by_prop"][a.prop_name(p)] = arr;
  }
  j["triplets_by_prop"] = nlohmann::ordered_json::object();
  for (const auto& [p, frs] : d.by_prop) {
    std::set<Triplet> ts;
    for (const auto& fr : frs)
      for (const auto& t : extract_triplets(fr, a)) ts.insert(t);
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& t : ts)
      arr.push_back({a.state_name(t.q), a.state_name(t.q1), a.state_name(t.q2)});
    j["triplets_by_prop"][a.prop_name(p)] = arr;
  }
  j["partitions"] = nlohmann::json::array();
  for (const auto& [k, b] : d.partitions) {
    nlohmann::ordered_json jb;
    jb["key"] = partition_key_str(k, a);
    nlohmann::ordered_json ts = nlohmann::ordered_json::array();
    for (const auto& t : b.triplets) ts.push_back({a.state_name(t.q), a.state_name(t.q1), a.state_name(t.q2)});
    jb["triplets"] = ts;
    jb["source_props"] = a.edge_label_names(b.source_label);
    jb["merged_target_props"] = a.edge_label_names(b.merged_target);
    if (!d.bucket_feasibility.empty()) jb["feasible"] = d.bucket_feasibility.at(k);
    j["partitions"].push_back(jb);
  }
  if (!d.triplet_feasibility.empty()) {
    j["triplet_feasibility"] = nlohmann::json::array();
    for (const auto& [t, ok] : d.triplet_feasibility) {
      nlohmann::ordered_json jt;
      jt["triplet"] = {a.state_name(t.q), a.state_name(t.q1), a.state_name(t.q2)};
      jt["feasible"] = ok;
      j["triplet_feasibility"].push_back(jt);
    }
    j["obligations"] = nlohmann::json::array();
    for (const auto& k : d.obligations) j["obligations"].push_back(partition_key_str(k, a));
    j["coverable_props"] = nlohmann::json::array();
    for (int p : d.coverable_props) j["coverable_props"].push_back(a.prop_name(p));
    j["uncoverable_props"] = nlohmann::json::array();
    for (int p : d.uncoverable_props) j["uncoverable_props"].push_back(a.prop_name(p));
  }
  return j;
}

}  // namespace cbf
