#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbf/certificate.hpp"
#include "cbf/gain.hpp"
#include "cbf/parallel.hpp"
#include "cbf/region.hpp"
#include "cbf/system.hpp"

namespace cbf {

// ---------------------------------------------------------------------------
// Region grids
// ---------------------------------------------------------------------------

// Deterministic product grid over a union of boxes; points are addressed by a
// flat index (box-major, then row-major over axes).
struct RegionGrid {
  struct BoxGrid {
    std::vector<std::vector<double>> axes;
    std::size_t count = 1;
  };
  std::vector<BoxGrid> boxes;
  std::size_t total = 0;
  std::size_t dim = 0;

  static RegionGrid make(const Region& r, double step, double offset = 0.0, std::size_t max_points = 200000000) {
    if (!r.bounded()) throw std::invalid_argument("grid: region must be bounded");
    RegionGrid g;
    g.dim = r.dimension();
    for (const auto& b : r.boxes) {
      BoxGrid bg;
      bg.count = 1;
      for (std::size_t d = 0; d < b.dimension(); ++d) {
        auto axis = grid_points(b.lo[d], b.hi[d], step, offset);
        if (axis.empty()) {
          bg.count = 0;
          break;
        }
        bg.count *= axis.size();
        bg.axes.push_back(std::move(axis));
        if (bg.count > max_points) throw std::invalid_argument("grid: too many points; coarsen the step");
      }
      if (bg.count == 0) continue;
      g.total += bg.count;
      if (g.total > max_points) throw std::invalid_argument("grid: too many points; coarsen the step");
      g.boxes.push_back(std::move(bg));
    }
    return g;
  }

  void point(std::size_t idx, std::vector<double>& out) const {
    for (const auto& bg : boxes) {
      if (idx >= bg.count) {
        idx -= bg.count;
        continue;
      }
      out.resize(bg.axes.size());
      for (std::size_t d = bg.axes.size(); d-- > 0;) {
        std::size_t n = bg.axes[d].size();
        out[d] = bg.axes[d][idx % n];
        idx /= n;
      }
      return;
    }
    throw std::out_of_range("grid point index out of range");
  }
};

// ---------------------------------------------------------------------------
// Verification reports
// ---------------------------------------------------------------------------

struct ConditionReport {
  std::string name;
  bool checked = false;
  bool pass = false;
  double worst_violation = -std::numeric_limits<double>::infinity();
  std::vector<double> witness_x, witness_w, witness_u;
  std::size_t points = 0;
  double margin = 0.0;       // Lipschitz margin delta = L * step / 2
  bool certified = false;    // held with margin at every grid point
  std::string note;
};

struct VerificationReport {
  std::vector<ConditionReport> conditions;
  double tolerance = 0.0;

  bool pass() const {
    for (const auto& c : conditions)
      if (c.checked && !c.pass) return false;
    return true;
  }
  const ConditionReport* find(const std::string& name) const {
    for (const auto& c : conditions)
      if (c.name == name) return &c;
    return nullptr;
  }
};

inline nlohmann::ordered_json to_json(const VerificationReport& r) {
  nlohmann::ordered_json j;
  j["pass"] = r.pass();
  j["tolerance"] = r.tolerance;
  j["conditions"] = nlohmann::json::array();
  for (const auto& c : r.conditions) {
    nlohmann::ordered_json jc;
    jc["name"] = c.name;
    jc["checked"] = c.checked;
    if (!c.checked) {
      j["conditions"].push_back(jc);
      continue;
    }
    jc["pass"] = c.pass;
    jc["worst_violation"] = c.worst_violation;
    jc["points"] = c.points;
    jc["margin"] = c.margin;
    jc["certified_with_margin"] = c.certified;
    if (!c.witness_x.empty()) jc["witness_x"] = c.witness_x;
    if (!c.witness_w.empty()) jc["witness_w"] = c.witness_w;
    if (!c.witness_u.empty()) jc["witness_u"] = c.witness_u;
    if (!c.note.empty()) jc["note"] = c.note;
    j["conditions"].push_back(jc);
  }
  return j;
}

inline std::string to_text(const VerificationReport& r) {
  std::ostringstream os;
  os.precision(9);
  for (const auto& c : r.conditions) {
    if (!c.checked) {
      os << "  [skip] " << c.name << "\n";
      continue;
    }
    os << (c.pass ? "  [pass] " : "  [FAIL] ") << c.name << "  worst violation " << c.worst_violation << " over "
       << c.points << " points";
    os << (c.certified ? " (certified with margin " : " (sampled only, margin ") << c.margin << ")";
    if (!c.pass && !c.witness_x.empty()) {
      os << "  witness x=(";
      for (std::size_t i = 0; i < c.witness_x.size(); ++i) os << (i ? "," : "") << c.witness_x[i];
      os << ")";
      if (!c.witness_w.empty()) {
        os << " w=(";
        for (std::size_t i = 0; i < c.witness_w.size(); ++i) os << (i ? "," : "") << c.witness_w[i];
        os << ")";
      }
    }
    if (!c.note.empty()) os << "  [" << c.note << "]";
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Local certificate verification by guaranteed-margin sampling
// ---------------------------------------------------------------------------

struct GridSpec {
  double x_step = 1e-2;
  double w_step = 0.5;
  double tolerance = 0.0;       // a condition passes when worst violation <= tolerance
  double boundary_offset = 0.0; // interior offset applied to region grids
  double strict_slack = 1e-9;   // slack for the strict unsafe-level inequality
  std::optional<double> lipschitz;  // user-supplied estimate; sampled otherwise
  enum class WMode { Grid, Reference } w_mode = WMode::Grid;
  enum class XDomain { StateRegion, RegionA } decrease_domain = XDomain::StateRegion;
  std::optional<std::vector<double>> w_reference;  // overrides the controller reference
  std::vector<std::string> conditions = {"output-bound", "initial-level", "unsafe-level", "decrease"};
  unsigned workers = 0;

  bool wants(const std::string& c) const {
    return std::find(conditions.begin(), conditions.end(), c) != conditions.end();
  }
};

namespace detail {

struct SweepResult {
  double worst = -std::numeric_limits<double>::infinity();
  std::size_t worst_idx = 0;
  double max_delta = 0.0;  // max |v(i+1)-v(i)| over consecutive indices, Lipschitz probe
  std::size_t points = 0;
};

// Deterministic parallel sweep of v over [0, n): merge keeps the largest
// violation; ties resolve to the smallest index (lexicographically smallest
// witness under the grid's canonical ordering).
inline SweepResult sweep(std::size_t n, const std::function<double(std::size_t)>& v, unsigned workers) {
  std::vector<SweepResult> partial;
  std::size_t chunks = 0;
  {
    unsigned hw = workers ? workers : std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    chunks = std::min<std::size_t>(hw, std::max<std::size_t>(n, 1));
  }
  partial.resize(chunks);
  parallel_chunks(
      n,
      [&](std::size_t c, std::size_t lo, std::size_t hi) {
        SweepResult r;
        double prev = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t i = lo; i < hi; ++i) {
          double val = v(i);
          ++r.points;
          if (val > r.worst) {
            r.worst = val;
            r.worst_idx = i;
          }
          if (!std::isnan(prev)) r.max_delta = std::max(r.max_delta, std::abs(val - prev));
          prev = val;
        }
        partial[c] = r;
      },
      static_cast<unsigned>(chunks));
  SweepResult out;
  for (const auto& r : partial) {
    if (r.points == 0) continue;
    out.points += r.points;
    out.max_delta = std::max(out.max_delta, r.max_delta);
    if (r.worst > out.worst || (r.worst == out.worst && r.worst_idx < out.worst_idx)) {
      out.worst = r.worst;
      out.worst_idx = r.worst_idx;
    }
  }
  return out;
}

}  // namespace detail

// Checks the four local-certificate conditions on grids:
//   output-bound:  B(x) >= alpha_hat(|x|_inf)          on X
//   initial-level: B(x) <= eps_upper                   on X_a
//   unsafe-level:  B(x) >  eps_lower                   on X_b
//   decrease:      B(f(x,u,w)) <= kappa_hat(B(x)) + gamma_hat(|w|_inf)
//                  (max-form bound when only max-form gains are present)
// For the decrease, a supplied controller fixes u = u(x); otherwise a finite
// input set realizes the existential by enumeration. Internal inputs range
// over a grid of W or stay at the determinization reference, per GridSpec.
inline VerificationReport verify_local(const LocalCertificate& cert, const Subsystem& sys, const GridSpec& grid) {
  cert.validate();
  VerificationReport rep;
  rep.tolerance = grid.tolerance;
  if (!cert.state_region.bounded() || !cert.region_a.bounded() || !cert.region_b.bounded())
    throw std::invalid_argument("verify_local: regions must be bounded");

  auto run_region_condition = [&](const std::string& name, const Region& reg,
                                  const std::function<double(std::span<const double>)>& violation) {
    ConditionReport c;
    c.name = name;
    if (!grid.wants(name)) {
      rep.conditions.push_back(c);
      return;
    }
    c.checked = true;
    RegionGrid g = RegionGrid::make(reg, grid.x_step, grid.boundary_offset);
    if (g.total == 0) {
      c.pass = true;
      c.note = "region grid is empty";
      rep.conditions.push_back(c);
      return;
    }
    auto res = detail::sweep(
        g.total,
        [&](std::size_t i) {
          thread_local std::vector<double> x;
          g.point(i, x);
          return violation(x);
        },
        grid.workers);
    c.points = res.points;
    c.worst_violation = res.worst;
    double lip = grid.lipschitz ? *grid.lipschitz : res.max_delta / grid.x_step;
    c.margin = lip * grid.x_step / 2.0;
    c.pass = res.worst <= grid.tolerance;
    c.certified = res.worst <= -c.margin;
    std::vector<double> wx;
    g.point(res.worst_idx, wx);
    c.witness_x = wx;
    rep.conditions.push_back(c);
  };

  run_region_condition("output-bound", cert.state_region, [&](std::span<const double> x) {
    return cert.alpha_hat(inf_norm(x)) - cert.barrier.eval(x);
  });
  run_region_condition("initial-level", cert.region_a,
                       [&](std::span<const double> x) { return cert.barrier.eval(x) - cert.eps_upper; });
  run_region_condition("unsafe-level", cert.region_b, [&](std::span<const double> x) {
    return (cert.eps_lower + grid.strict_slack) - cert.barrier.eval(x);
  });

  ConditionReport dec;
  dec.name = "decrease";
  if (!grid.wants("decrease")) {
    rep.conditions.push_back(dec);
    return rep;
  }
  dec.checked = true;

  const bool has_controller = cert.controller.has_value() && !cert.controller->is_zero();
  const bool finite_inputs = std::holds_alternative<FiniteInputSet>(sys.input);
  if (!has_controller && !finite_inputs)
    throw std::invalid_argument("verify_local: decrease check needs a controller or a finite input set");

  const Region& xdom = grid.decrease_domain == GridSpec::XDomain::RegionA ? cert.region_a : cert.state_region;
  RegionGrid xg = RegionGrid::make(xdom, grid.x_step, grid.boundary_offset);

  // Internal input sweep: full grid or the single determinization reference.
  std::vector<std::vector<double>> wpoints;
  if (sys.internal_dim == 0) {
    wpoints.push_back({});
  } else if (grid.w_mode == GridSpec::WMode::Grid) {
    if (sys.internal_dim > 3)
      throw std::invalid_argument("verify_local: internal input grid is too large; use the reference w mode");
    const Region& wreg = cert.internal_region.empty() ? sys.internal_region : cert.internal_region;
    if (!wreg.bounded() || wreg.empty())
      throw std::invalid_argument("verify_local: internal input region must be bounded and non-empty");
    RegionGrid wg = RegionGrid::make(wreg, grid.w_step);
    wpoints.reserve(wg.total);
    std::vector<double> w;
    for (std::size_t i = 0; i < wg.total; ++i) {
      wg.point(i, w);
      wpoints.push_back(w);
    }
  } else {
    if (grid.w_reference) {
      if (grid.w_reference->size() != sys.internal_dim)
        throw std::invalid_argument("verify_local: w reference dimension mismatch");
      wpoints.push_back(*grid.w_reference);
    } else if (has_controller && cert.controller->is_determinized()) {
      wpoints.push_back(cert.controller->determinized()->reference(sys));
    } else {
      DeterminizedController probe;  // centroid default
      probe.inputs = {0.0};
      wpoints.push_back(probe.reference(sys));
    }
  }

  // Decrease bound: additive hats when available, max-form otherwise.
  const bool additive = cert.kappa_hat.has_value();
  MaxFormGains mf;
  if (!additive) mf = cert.max_form();
  auto bound = [&](double bx, double wnorm) {
    if (additive) {
      double rhs = (*cert.kappa_hat)(bx);
      if (cert.gamma_hat) rhs += (*cert.gamma_hat)(wnorm);
      return rhs;
    }
    double rhs = mf.kappa(bx);
    if (mf.gamma_w) rhs = std::max(rhs, (*mf.gamma_w)(wnorm));
    return rhs;
  };

  std::vector<double> finite_u;
  if (!has_controller) {
    for (const auto& p : std::get<FiniteInputSet>(sys.input).points) finite_u.push_back(p[0]);
    std::sort(finite_u.begin(), finite_u.end());
    if (finite_u.empty()) throw std::invalid_argument("verify_local: empty input set");
  }

  const std::size_t nw = wpoints.size();
  const std::size_t total = xg.total * nw;
  struct Local {
    std::vector<double> x, next, u;
  };
  auto violation_at = [&](std::size_t idx, Local& tl, std::vector<double>* best_u) -> double {
    std::size_t xi = idx / nw, wi = idx % nw;
    xg.point(xi, tl.x);
    const auto& w = wpoints[wi];
    double bx = cert.barrier.eval(tl.x);
    double rhs = bound(bx, inf_norm(w));
    tl.next.resize(sys.state_dim);
    if (has_controller) {
      tl.u = cert.controller->eval(sys, tl.x);
      sys.transition(tl.x, tl.u, w, tl.next);
      if (best_u) *best_u = tl.u;
      return cert.barrier.eval(tl.next) - rhs;
    }
    double best = std::numeric_limits<double>::infinity();
    double pick = finite_u.front();
    for (double cand : finite_u) {
      double uv[1] = {cand};
      sys.transition(tl.x, std::span<const double>(uv, 1), w, tl.next);
      double v = cert.barrier.eval(tl.next);
      if (v < best) {
        best = v;
        pick = cand;
      }
    }
    if (best_u) *best_u = {pick};
    return best - rhs;
  };

  auto res = detail::sweep(
      total,
      [&](std::size_t i) {
        thread_local Local tl;
        return violation_at(i, tl, nullptr);
      },
      grid.workers);
  dec.points = res.points;
  dec.worst_violation = res.worst;
  double lip = grid.lipschitz ? *grid.lipschitz : res.max_delta / std::min(grid.x_step, grid.w_step);
  dec.margin = lip * std::min(grid.x_step, grid.w_step) / 2.0;
  dec.pass = res.worst <= grid.tolerance;
  dec.certified = res.worst <= -dec.margin;
  {
    Local wit;
    std::vector<double> wu;
    violation_at(res.worst_idx, wit, &wu);
    dec.witness_x = wit.x;
    dec.witness_w = wpoints[res.worst_idx % nw];
    dec.witness_u = wu;
  }
  dec.note = additive ? "additive bound" : "max-form bound";
  if (grid.w_mode == GridSpec::WMode::Reference) dec.note += ", reference internal input";
  rep.conditions.push_back(dec);
  return rep;
}

// ---------------------------------------------------------------------------
// Gain matrix and composition
// ---------------------------------------------------------------------------

struct SmallGainError : std::runtime_error {
  explicit SmallGainError(const std::string& m) : std::runtime_error("small-gain: " + m) {}
};
struct LevelConditionError : std::runtime_error {
  explicit LevelConditionError(const std::string& m) : std::runtime_error("level condition: " + m) {}
};

// gamma_ii = kappa_i, gamma_ij = gamma_wi o alpha_j^-1 on wired pairs.
// Certificates carrying only additive hats are converted first.
inline GainMatrix gamma_matrix(const std::vector<LocalCertificate>& locals,
                               const std::function<bool(std::size_t, std::size_t)>& wired = {}) {
  GainMatrix g(locals.size());
  std::vector<MaxFormGains> mf;
  mf.reserve(locals.size());
  for (const auto& c : locals) mf.push_back(c.max_form());
  for (std::size_t i = 0; i < locals.size(); ++i) {
    g.set(i, i, mf[i].kappa);
    if (!mf[i].gamma_w) continue;
    for (std::size_t j = 0; j < locals.size(); ++j) {
      if (j == i) continue;
      if (wired && !wired(i, j)) continue;
      g.set(i, j, compose(*mf[i].gamma_w, locals[j].alpha_hat.inverse()));
    }
  }
  g.validate();
  return g;
}

enum class WiringKind { Custom, None, Ring, All };

inline std::function<bool(std::size_t, std::size_t)> wired_predicate(WiringKind kind, std::size_t n) {
  switch (kind) {
    case WiringKind::None: return [](std::size_t, std::size_t) { return false; };
    case WiringKind::Ring:
      return [n](std::size_t i, std::size_t j) { return j == (i + 1) % n || j == (i + n - 1) % n; };
    case WiringKind::All: return [](std::size_t, std::size_t) { return true; };
    case WiringKind::Custom: break;
  }
  return {};
}

struct ComposeOptions {
  std::function<bool(std::size_t, std::size_t)> wired;  // j influences i
  double domain_hi = 0.0;                               // bound for gain comparisons
};

inline ComposedCertificate compose_certificates(const std::vector<LocalCertificate>& locals,
                                                const std::vector<KFn>& phis, const ComposeOptions& opt = {}) {
  if (locals.empty() || locals.size() != phis.size())
    throw std::invalid_argument("compose: need one rescaling function per local certificate");
  GainMatrix g = gamma_matrix(locals, opt.wired);
  auto rep = check_small_gain_report(g, opt.domain_hi);
  if (!rep.ok) throw SmallGainError(rep.failure);

  ComposedCertificate c;
  c.locals = locals;
  c.phis = phis;
  double e1 = -std::numeric_limits<double>::infinity(), e2 = e1;
  for (std::size_t i = 0; i < locals.size(); ++i) {
    KFn inv = phis[i].inverse();
    e1 = std::max(e1, locals[i].eps_upper > 0 ? inv(locals[i].eps_upper) : 0.0);
    e2 = std::max(e2, locals[i].eps_lower > 0 ? inv(locals[i].eps_lower) : 0.0);
  }
  if (e1 > e2)
    throw LevelConditionError("rescaled upper level " + std::to_string(e1) + " exceeds rescaled lower level " +
                              std::to_string(e2));
  c.eps1 = e1;
  c.eps2 = e2;
  return c;
}

// Homogeneous composition: one shared local certificate across n identical
// blocks. Cycle gains of a uniform matrix depend only on the cycle length,
// so the small-gain condition is decided on a small representative network
// with the same wiring pattern.
inline ComposedCertificate compose_certificates_homogeneous(const LocalCertificate& local, const KFn& phi,
                                                            std::size_t n, WiringKind kind,
                                                            double domain_hi = 0.0) {
  if (n == 0) throw std::invalid_argument("compose: empty network");
  std::size_t rep_n = std::min<std::size_t>(n, 4);
  std::vector<LocalCertificate> reps(rep_n, local);
  std::vector<KFn> rep_phis(rep_n, phi);
  ComposeOptions opt;
  opt.domain_hi = domain_hi;
  opt.wired = rep_n == n ? wired_predicate(kind, n) : wired_predicate(kind == WiringKind::None ? kind : WiringKind::All, rep_n);
  ComposedCertificate rep = compose_certificates(reps, rep_phis, opt);
  ComposedCertificate c;
  c.locals = {local};
  c.phis = {phi};
  c.blocks = n;
  c.eps1 = rep.eps1;
  c.eps2 = rep.eps2;
  return c;
}

inline double eval_composed(const ComposedCertificate& c, std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  std::size_t off = 0;
  for (std::size_t i = 0; i < c.count(); ++i) {
    const LocalCertificate& li = c.local(i);
    std::size_t d = li.dimension();
    if (off + d > x.size()) throw std::invalid_argument("eval_composed: state dimension mismatch");
    double bi = li.barrier.eval(x.subspan(off, d));
    m = std::max(m, c.phi(i).inverse()(bi));
    off += d;
  }
  if (off != x.size()) throw std::invalid_argument("eval_composed: state dimension mismatch");
  return m;
}

// Contraction function of the composed certificate:
// kappa = max over present entries of phi_i^-1 o gamma_ij o phi_j,
// evaluated pointwise over the distinct scaled gains.
class ComposedContraction {
 public:
  ComposedContraction(const ComposedCertificate& c, const std::function<bool(std::size_t, std::size_t)>& wired = {}) {
    // A homogeneous network's distinct scaled gains are those of a small
    // representative; heterogeneous networks use the full matrix.
    std::size_t rep_n = c.locals.size() == 1 ? std::min<std::size_t>(c.count(), 4) : c.count();
    std::vector<LocalCertificate> locals;
    std::vector<KFn> phis;
    for (std::size_t i = 0; i < rep_n; ++i) {
      locals.push_back(c.local(i));
      phis.push_back(c.phi(i));
    }
    auto rep_wired = c.count() == rep_n ? wired : std::function<bool(std::size_t, std::size_t)>{};
    GainMatrix g = gamma_matrix(locals, rep_wired);
    for (const auto& [ij, f] : g.entries) {
      KFn scaled = compose(compose(phis[ij.first].inverse(), f), phis[ij.second]);
      bool fresh = true;
      for (const auto& k : distinct_)
        if (k == scaled) {
          fresh = false;
          break;
        }
      if (fresh) distinct_.push_back(scaled);
    }
  }

  double operator()(double b) const {
    double m = 0.0;
    for (const auto& k : distinct_) m = std::max(m, k(b));
    return m;
  }
  const std::vector<KFn>& entries() const { return distinct_; }

 private:
  std::vector<KFn> distinct_;
};

// Samples random states, applies the stationary policy, and checks the
// composed decrease B(f(x, u(x))) <= kappa(B(x)) up to `tolerance`.
inline VerificationReport check_decrease_composed(
    const ComposedCertificate& cert, const InterconnectedSystem& sys,
    const std::function<std::vector<double>(std::span<const double>)>& policy, std::size_t samples,
    unsigned long long seed = 1, double tolerance = 1e-6,
    const std::function<bool(std::size_t, std::size_t)>& wired = {}) {
  ComposedContraction kappa(cert, wired);
  ConditionReport c;
  c.name = "composed-decrease";
  c.checked = true;

  std::mt19937_64 rng(seed);
  std::vector<double> x(sys.state_dim());
  std::size_t violations = 0;
  double worst = -std::numeric_limits<double>::infinity();
  std::vector<double> worst_x;
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < sys.blocks(); ++i) {
      const auto& reg = sys.sub(i).state_region;
      const Box& b = reg.boxes[rng() % reg.boxes.size()];
      for (std::size_t d = 0; d < b.dimension(); ++d) {
        std::uniform_real_distribution<double> u(b.lo[d], b.hi[d]);
        x[off++] = u(rng);
      }
    }
    double bx = eval_composed(cert, x);
    auto u = policy(x);
    auto xn = sys.step(x, u);
    double v = eval_composed(cert, xn) - kappa(bx);
    if (v > worst) {
      worst = v;
      worst_x = x;
    }
    if (v > tolerance) ++violations;
  }
  c.points = samples;
  c.worst_violation = worst;
  c.witness_x = worst_x;
  c.pass = violations == 0;
  c.note = "violations: " + std::to_string(violations);
  VerificationReport rep;
  rep.tolerance = tolerance;
  rep.conditions.push_back(c);
  return rep;
}

}  // namespace cbf
