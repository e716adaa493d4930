#pragma once

#include <cstddef>
#include <functional>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbf/kfn.hpp"

namespace cbf {

// Internal-gain matrix of an interconnection: entry (i,j) bounds the
// influence of subsystem j on subsystem i. Absent entry = no influence.
// Diagonal entries must be present (they carry each subsystem's own
// contraction function). Indices are 0-based internally.
struct GainMatrix {
  std::size_t n = 0;
  std::map<std::pair<std::size_t, std::size_t>, KFn> entries;

  GainMatrix() = default;
  explicit GainMatrix(std::size_t size) : n(size) {}

  void set(std::size_t i, std::size_t j, KFn f) {
    if (i >= n || j >= n) throw std::out_of_range("gain matrix index out of range");
    entries.insert_or_assign({i, j}, std::move(f));
  }
  const KFn* get(std::size_t i, std::size_t j) const {
    auto it = entries.find({i, j});
    return it == entries.end() ? nullptr : &it->second;
  }
  bool all_linear() const {
    for (const auto& [ij, f] : entries)
      if (!f.is_linear()) return false;
    return true;
  }
  void validate() const {
    for (std::size_t i = 0; i < n; ++i)
      if (!get(i, i)) throw std::invalid_argument("gain matrix: missing diagonal entry " + std::to_string(i));
  }
};

struct SmallGainReport {
  bool ok = false;
  std::string method;                 // "cycle-mean" or "enumeration"
  std::vector<std::size_t> worst_cycle;
  double min_log_slack = std::numeric_limits<double>::infinity();  // min over cycles of -log(product), linear case
  bool hairline = false;              // slack provable but below 1e-6
  std::string failure;                // non-empty when the answer is not a clean pass

  explicit operator bool() const { return ok; }
};

namespace detail {

// Minimum cycle mean (Karp) over edge weights w(i,j) = -log c(i,j).
// A cycle with gain product >= 1 exists iff the minimum mean is <= 0.
inline double min_cycle_mean(std::size_t n, const std::map<std::pair<std::size_t, std::size_t>, double>& w) {
  const double inf = std::numeric_limits<double>::infinity();
  // d[k][v] = minimum weight of a k-edge walk ending at v (any start).
  std::vector<std::vector<double>> d(n + 1, std::vector<double>(n, inf));
  for (std::size_t v = 0; v < n; ++v) d[0][v] = 0.0;
  for (std::size_t k = 1; k <= n; ++k)
    for (const auto& [ij, wt] : w) {
      auto [u, v] = ij;
      if (d[k - 1][u] < inf) d[k][v] = std::min(d[k][v], d[k - 1][u] + wt);
    }
  double mu = inf;
  for (std::size_t v = 0; v < n; ++v) {
    if (d[n][v] == inf) continue;
    double worst = -inf;
    for (std::size_t k = 0; k < n; ++k) {
      if (d[k][v] == inf) continue;
      worst = std::max(worst, (d[n][v] - d[k][v]) / static_cast<double>(n - k));
    }
    if (worst > -inf) mu = std::min(mu, worst);
  }
  return mu;  // +inf when the graph is acyclic
}

// Elementary cycle enumeration (Tiernan-style, smallest-root convention).
// Visits each simple cycle exactly once; aborts via budget.
inline bool enumerate_cycles(std::size_t n,
                             const std::vector<std::vector<std::size_t>>& adj,
                             std::size_t budget,
                             const std::function<bool(const std::vector<std::size_t>&)>& visit) {
  std::size_t seen = 0;
  std::vector<std::size_t> path;
  std::vector<bool> on_path(n, false);
  bool aborted = false;

  std::function<bool(std::size_t, std::size_t)> dfs = [&](std::size_t root, std::size_t v) -> bool {
    path.push_back(v);
    on_path[v] = true;
    for (std::size_t w : adj[v]) {
      if (w == root) {
        if (++seen > budget) { aborted = true; }
        if (aborted || !visit(path)) { on_path[v] = false; path.pop_back(); return false; }
      } else if (w > root && !on_path[w]) {
        if (!dfs(root, w)) { on_path[v] = false; path.pop_back(); return false; }
      }
    }
    on_path[v] = false;
    path.pop_back();
    return true;
  };

  for (std::size_t root = 0; root < n; ++root)
    if (!dfs(root, root)) return !aborted;
  return !aborted;
}

}  // namespace detail

// Small-gain condition: around every simple cycle of the influence graph the
// composed gain stays strictly below the identity. All-linear matrices are
// decided exactly via the minimum cycle mean of -log coefficients; other
// matrices fall back to cycle enumeration and three-valued comparison.
inline SmallGainReport check_small_gain_report(const GainMatrix& g, double domain_hi = 0.0,
                                               std::size_t cycle_budget = 200000) {
  g.validate();
  SmallGainReport rep;
  if (g.all_linear()) {
    rep.method = "cycle-mean";
    std::map<std::pair<std::size_t, std::size_t>, double> w;
    for (const auto& [ij, f] : g.entries) w[ij] = -std::log(f.is_identity() ? 1.0 : f.coeff());
    double mu = detail::min_cycle_mean(g.n, w);
    rep.min_log_slack = mu;
    rep.ok = mu > 0.0;
    rep.hairline = rep.ok && mu < 1e-6;
    if (!rep.ok) rep.failure = "cycle with composed gain >= identity (min cycle mean of -log gains is non-positive)";
    return rep;
  }

  rep.method = "enumeration";
  std::vector<std::vector<std::size_t>> adj(g.n);
  for (const auto& [ij, f] : g.entries) adj[ij.first].push_back(ij.second);
  bool ok = true;
  bool complete = detail::enumerate_cycles(g.n, adj, cycle_budget, [&](const std::vector<std::size_t>& cyc) {
    KFn composed = KFn::identity();
    for (std::size_t k = 0; k < cyc.size(); ++k) {
      std::size_t i = cyc[k], j = cyc[(k + 1) % cyc.size()];
      composed = compose(composed, *g.get(i, j));
    }
    Order ord = less_than_identity_ord(composed, domain_hi);
    if (ord != Order::Proven) {
      ok = false;
      rep.worst_cycle = cyc;
      rep.failure = ord == Order::Refuted ? "cycle composes to a gain not below identity: " + composed.str()
                                          : "cycle gain incomparable with identity: " + composed.str();
      return false;
    }
    return true;
  });
  if (!complete) {
    rep.ok = false;
    rep.failure = "cycle enumeration budget exhausted; small-gain status undecided";
    return rep;
  }
  rep.ok = ok;
  return rep;
}

inline bool check_small_gain(const GainMatrix& g, double domain_hi = 0.0) {
  return check_small_gain_report(g, domain_hi).ok;
}

struct PhiResult {
  bool ok = false;
  std::vector<KFn> phis;
  std::string failure;
  explicit operator bool() const { return ok; }
};

// Rescaling functions phi_i with  max_j phi_i^-1 o gamma_ij o phi_j < id.
// If every entry is already below identity the phis are identities. For
// all-linear matrices a positive scaling d is recovered from the difference
// constraints log d_j - log d_i < -log c_ij (Bellman-Ford over a slackened
// constraint graph). Anything else is an explicit unsupported-class failure.
inline PhiResult find_phi(const GainMatrix& g, double domain_hi = 0.0) {
  g.validate();
  PhiResult res;
  auto rep = check_small_gain_report(g, domain_hi);
  if (!rep.ok) {
    res.failure = "small-gain condition does not hold: " + rep.failure;
    return res;
  }

  bool all_below = true;
  for (const auto& [ij, f] : g.entries)
    if (less_than_identity_ord(f, domain_hi) != Order::Proven) { all_below = false; break; }
  if (all_below) {
    res.ok = true;
    res.phis.assign(g.n, KFn::identity());
    return res;
  }

  if (!g.all_linear()) {
    res.failure = "unsupported gain class: scaling search is implemented for linear gain matrices only";
    return res;
  }

  std::map<std::pair<std::size_t, std::size_t>, double> w;
  for (const auto& [ij, f] : g.entries) w[ij] = -std::log(f.is_identity() ? 1.0 : f.coeff());
  double mu = detail::min_cycle_mean(g.n, w);  // > 0 since small-gain holds
  double eps = mu / 2.0;

  // Shortest paths from a virtual source (distance 0 everywhere) under
  // weights w - eps; no negative cycle by the choice of eps.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> z(g.n, 0.0);
  for (std::size_t pass = 0; pass <= g.n; ++pass) {
    bool changed = false;
    for (const auto& [ij, wt] : w) {
      auto [i, j] = ij;
      if (i == j) continue;
      if (z[i] < inf && z[i] + wt - eps < z[j] - 1e-15) {
        z[j] = z[i] + wt - eps;
        changed = true;
      }
    }
    if (!changed) break;
    if (pass == g.n) {
      res.failure = "scaling search failed to converge";
      return res;
    }
  }

  res.phis.reserve(g.n);
  for (std::size_t i = 0; i < g.n; ++i)
    res.phis.push_back(z[i] == 0.0 ? KFn::identity() : KFn::linear(std::exp(z[i])));

  // Never return an unverified answer.
  for (const auto& [ij, f] : g.entries) {
    auto [i, j] = ij;
    KFn scaled = compose(compose(res.phis[i].inverse(), f), res.phis[j]);
    if (less_than_identity_ord(scaled, domain_hi) != Order::Proven) {
      res.ok = false;
      res.phis.clear();
      res.failure = "scaling candidate failed verification on entry (" + std::to_string(i) + "," + std::to_string(j) + ")";
      return res;
    }
  }
  res.ok = true;
  return res;
}

struct MaxFormGains {
  KFn kappa;
  std::optional<KFn> gamma_w;
};

inline KFn default_psi() { return KFn::linear(1.0 - 1e-9); }

// Converts an additive decrease bound  B(f) <= kh(B) + gh(|w|)  into the
// max-form pair (kappa, gamma_w) with
//   kappa   = id - (id - psi) o (id - kh)
//   gamma_w = (id - kh)^-1 o psi^-1 o gh
// kh and psi must be linear with coefficient < 1 so that id - kh and
// id - psi remain class-K-infinity.
inline MaxFormGains max_form_conversion(const KFn& kappa_hat, const std::optional<KFn>& gamma_hat,
                                        const KFn& psi = default_psi()) {
  if (kappa_hat.form() != KFn::Form::Linear || kappa_hat.coeff() >= 1.0)
    throw std::invalid_argument(
        "max-form conversion needs a linear contraction with coefficient < 1; "
        "supply max-form gains directly for other shapes");
  if (psi.form() != KFn::Form::Linear || psi.coeff() >= 1.0)
    throw std::invalid_argument("max-form conversion needs linear psi < identity");
  double ck = kappa_hat.coeff(), cp = psi.coeff();
  MaxFormGains out;
  out.kappa = KFn::linear(1.0 - (1.0 - cp) * (1.0 - ck));
  if (gamma_hat)
    out.gamma_w = compose(compose(KFn::linear(1.0 / (1.0 - ck)), KFn::linear(1.0 / cp)), *gamma_hat);
  return out;
}

}  // namespace cbf
