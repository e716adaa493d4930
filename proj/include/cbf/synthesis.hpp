#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbf/certificate.hpp"
#include "cbf/detail/simplex.hpp"
#include "cbf/system.hpp"
#include "cbf/verify.hpp"

namespace cbf {

// Parametric barrier form: B(x) = sum_k p_k * x^basis[k].
struct BarrierTemplate {
  std::vector<std::vector<unsigned>> basis;          // monomial exponent vectors
  std::vector<std::pair<double, double>> parameter_bounds;

  std::size_t parameter_count() const { return basis.size(); }
  std::size_t dimension() const { return basis.empty() ? 0 : basis.front().size(); }

  Polynomial instantiate(const std::vector<double>& p) const {
    Polynomial poly;
    poly.dimension = dimension();
    for (std::size_t k = 0; k < basis.size(); ++k) poly.terms.push_back({p[k], basis[k]});
    poly.normalize();
    return poly;
  }

  void validate() const {
    std::set<std::vector<unsigned>> uniq(basis.begin(), basis.end());
    if (uniq.size() != basis.size()) throw std::invalid_argument("template: duplicate basis monomials");
    if (parameter_bounds.size() != basis.size())
      throw std::invalid_argument("template: one bound interval per basis monomial");
  }

  static BarrierTemplate quadratic_1d(double lo = -100.0, double hi = 100.0) {
    BarrierTemplate t;
    t.basis = {{2u}, {1u}, {0u}};
    t.parameter_bounds.assign(3, {lo, hi});
    return t;
  }
};

struct ClassFnCandidates {
  std::vector<KFn> alpha{KFn::power(1.0, 2.0)};
  std::vector<KFn> kappa{KFn::linear(0.5)};
  std::vector<std::optional<KFn>> gamma{KFn::linear(0.1)};
};

struct CegisConfig {
  std::size_t max_iterations = 40;
  double initial_grid_resolution = 0.25;
  double refinement_factor = 0.5;
  double final_resolution = 0.01;
  enum class Learner { LeastViolationLP, RandomRestart } learner = Learner::LeastViolationLP;
  double strict_slack = 1e-6;   // tau on the strict unsafe-level inequality
  double level_gap = 1e-3;      // separation enforced between the two level constraints
  double margin = 1e-9;         // counterexamples below this violation are ignored
  double w_step = 0.25;
  std::size_t restart_samples = 400;
  unsigned long long seed = 1;
  ClassFnCandidates candidates;
  unsigned workers = 0;
};

struct SynthesisRegions {
  Region region_a, region_b, state_region, internal_region;
};

struct Counterexample {
  std::string condition;
  std::vector<double> x, w;
  double violation = 0.0;

  bool operator<(const Counterexample& o) const {
    return std::tie(condition, x, w) < std::tie(o.condition, o.x, o.w);
  }
};

// Worst violation of the candidate's conditions on a grid of the given
// resolution, or nothing when every condition holds with margin. The
// existential over the inputs is realized by enumeration of `u_set`; an
// empty u_set restricts the search to the three bound conditions.
inline std::optional<Counterexample> counterexample_search(const LocalCertificate& cand, const Subsystem& sys,
                                                           const std::vector<double>& u_set, double resolution,
                                                           double w_step = 0.25, double margin = 1e-9,
                                                           unsigned workers = 0) {
  Subsystem patched = sys;
  GridSpec g;
  g.x_step = resolution;
  g.w_step = w_step;
  g.workers = workers;
  g.strict_slack = 0.0;  // the candidate's eps_lower already carries the slack
  if (u_set.empty()) {
    g.conditions = {"output-bound", "initial-level", "unsafe-level"};
  } else {
    FiniteInputSet fs;
    for (double u : u_set) fs.points.push_back({u});
    patched.input = std::move(fs);
    patched.input_dim = 1;
  }
  LocalCertificate c = cand;
  c.controller.reset();  // enumeration realizes the existential
  VerificationReport rep = verify_local(c, patched, g);
  const ConditionReport* worst = nullptr;
  for (const auto& cond : rep.conditions) {
    if (!cond.checked) continue;
    if (cond.worst_violation <= margin) continue;
    if (!worst || cond.worst_violation > worst->worst_violation) worst = &cond;
  }
  if (!worst) return std::nullopt;
  Counterexample ce;
  ce.condition = worst->name;
  ce.x = worst->witness_x;
  ce.w = worst->witness_w;
  ce.violation = worst->worst_violation;
  return ce;
}

struct IterationLog {
  std::size_t iteration = 0;
  double resolution = 0.0;
  double learner_objective = 0.0;
  std::string counterexample_condition;  // empty when none found
  double violation = 0.0;
};

struct SynthesisResult {
  bool ok = false;
  LocalCertificate certificate;
  VerificationReport final_report;
  std::vector<Counterexample> counterexamples;
  double best_violation = std::numeric_limits<double>::infinity();
  std::string failure;
  std::vector<IterationLog> log;

  explicit operator bool() const { return ok; }
};

namespace detail {

struct LearnerProblem {
  const BarrierTemplate* tmpl = nullptr;
  const Subsystem* sys = nullptr;
  const std::vector<double>* u_set = nullptr;
  KFn alpha = KFn::power(1.0, 2.0);
  KFn kappa = KFn::linear(0.5);
  std::optional<KFn> gamma;
  double level_gap = 1e-3;
  double lambda_hi = 1e6;

  std::vector<double> monomials(std::span<const double> x) const {
    std::vector<double> m(tmpl->basis.size(), 1.0);
    for (std::size_t k = 0; k < tmpl->basis.size(); ++k)
      for (std::size_t d = 0; d < x.size(); ++d)
        for (unsigned e = 0; e < tmpl->basis[k][d]; ++e) m[k] *= x[d];
    return m;
  }

  // Best input for a decrease counterexample under the current parameters:
  // the one minimizing the successor barrier value.
  double best_input(const std::vector<double>& p, const Counterexample& ce) const {
    Polynomial b = tmpl->instantiate(p);
    double best_u = u_set->front(), best = std::numeric_limits<double>::infinity();
    std::vector<double> next(sys->state_dim);
    for (double u : *u_set) {
      double uv[1] = {u};
      sys->transition(ce.x, std::span<const double>(uv, 1), ce.w, next);
      double v = b.eval(next);
      if (v < best) {
        best = v;
        best_u = u;
      }
    }
    return best_u;
  }

  // min t subject to the counterexample constraints, all linear in the
  // template parameters and the separation level.
  // Variables (after shifting into >= 0): p (bounded), level, t.
  detail::LpResult solve(const std::vector<Counterexample>& ces, const std::vector<double>& inputs_for_decrease) const {
    const std::size_t np = tmpl->parameter_count();
    const double t_cap = 1e7;
    std::vector<double> lo(np + 2), hi(np + 2);
    for (std::size_t k = 0; k < np; ++k) {
      lo[k] = tmpl->parameter_bounds[k].first;
      hi[k] = tmpl->parameter_bounds[k].second;
    }
    lo[np] = 0.0;
    hi[np] = lambda_hi;  // separation level
    lo[np + 1] = -t_cap;
    hi[np + 1] = t_cap;  // violation bound t

    std::vector<std::vector<double>> A;
    std::vector<double> b;
    auto add_row = [&](const std::vector<double>& coef, double rhs) {
      // coef * v <= rhs with v = lo + y, y >= 0
      std::vector<double> row(np + 2);
      double shift = 0.0;
      for (std::size_t k = 0; k < np + 2; ++k) {
        row[k] = coef[k];
        shift += coef[k] * lo[k];
      }
      A.push_back(std::move(row));
      b.push_back(rhs - shift);
    };
    // Upper bounds as rows: y_k <= hi - lo.
    for (std::size_t k = 0; k < np + 2; ++k) {
      std::vector<double> coef(np + 2, 0.0);
      coef[k] = 1.0;
      add_row(coef, hi[k]);
    }

    std::size_t dec_idx = 0;
    for (const auto& ce : ces) {
      std::vector<double> coef(np + 2, 0.0);
      coef[np + 1] = -1.0;  // ... - t <= rhs
      if (ce.condition == "output-bound") {
        auto m = monomials(ce.x);
        for (std::size_t k = 0; k < np; ++k) coef[k] = -m[k];
        add_row(coef, -alpha(inf_norm(ce.x)));
      } else if (ce.condition == "initial-level") {
        auto m = monomials(ce.x);
        for (std::size_t k = 0; k < np; ++k) coef[k] = m[k];
        coef[np] = -1.0;
        add_row(coef, -level_gap);
      } else if (ce.condition == "unsafe-level") {
        auto m = monomials(ce.x);
        for (std::size_t k = 0; k < np; ++k) coef[k] = -m[k];
        coef[np] = 1.0;
        add_row(coef, -level_gap);
      } else {  // decrease
        double u = inputs_for_decrease[dec_idx++];
        std::vector<double> next(sys->state_dim);
        double uv[1] = {u};
        sys->transition(ce.x, std::span<const double>(uv, 1), ce.w, next);
        auto mf = monomials(next);
        auto mx = monomials(ce.x);
        double kc = kappa.is_identity() ? 1.0 : kappa.coeff();
        for (std::size_t k = 0; k < np; ++k) coef[k] = mf[k] - kc * mx[k];
        double rhs = gamma ? (*gamma)(inf_norm(ce.w)) : 0.0;
        add_row(coef, rhs);
      }
    }

    std::vector<double> c(np + 2, 0.0);
    c[np + 1] = 1.0;  // minimize t
    auto res = detail::Simplex::minimize(c, A, b);
    if (res.feasible)
      for (std::size_t k = 0; k < np + 2; ++k) res.x[k] += lo[k];
    return res;
  }
};

}  // namespace detail

// Counterexample-guided search for a local certificate of the given
// parametric form over a finite input set. The learner solves a
// least-maximum-violation linear program over the accumulated
// counterexamples (or samples parameters at random); the internal oracle is
// a grid search refined between rounds. A returned certificate always passed
// verify_local at the final resolution.
inline SynthesisResult synthesize_cegis(const BarrierTemplate& tmpl, const Subsystem& sys,
                                        const SynthesisRegions& regions, const std::vector<double>& u_set,
                                        const CegisConfig& cfg) {
  tmpl.validate();
  SynthesisResult result;
  if (u_set.empty()) {
    result.failure = "empty input set";
    return result;
  }
  if (!regions.state_region.bounded() || !regions.region_a.bounded() || !regions.region_b.bounded()) {
    result.failure = "unbounded region";
    return result;
  }
  if (regions.region_a.intersects(regions.region_b)) {
    result.failure = "infeasible: the initial and unsafe regions overlap, so no barrier separates them";
    return result;
  }

  std::vector<double> inputs = u_set;
  std::sort(inputs.begin(), inputs.end());

  auto make_candidate = [&](const Polynomial& b, const KFn& alpha, const KFn& kappa,
                            const std::optional<KFn>& gamma, double eu, double el) {
    LocalCertificate cert;
    cert.barrier = b;
    cert.alpha_hat = alpha;
    cert.kappa_hat = kappa;
    cert.gamma_hat = gamma;
    cert.eps_upper = eu;
    cert.eps_lower = el;
    cert.region_a = regions.region_a;
    cert.region_b = regions.region_b;
    cert.state_region = regions.state_region;
    cert.internal_region = regions.internal_region;
    return cert;
  };

  // Levels per D-style rule: tight grid extrema of B padded by a margin.
  auto fit_levels = [&](const Polynomial& b, double res, double& eu, double& el) {
    RegionGrid ga = RegionGrid::make(regions.region_a, res);
    RegionGrid gb = RegionGrid::make(regions.region_b, res);
    std::vector<double> x;
    double bu = -std::numeric_limits<double>::infinity(), bl = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ga.total; ++i) {
      ga.point(i, x);
      bu = std::max(bu, b.eval(x));
    }
    for (std::size_t i = 0; i < gb.total; ++i) {
      gb.point(i, x);
      bl = std::min(bl, b.eval(x));
    }
    double pad = 10.0 * cfg.margin;
    eu = bu + pad;
    el = std::max(0.0, bl - cfg.strict_slack - pad);
  };

  std::mt19937_64 rng(cfg.seed);
  std::size_t iteration = 0;

  for (const auto& alpha : cfg.candidates.alpha) {
    for (const auto& kappa : cfg.candidates.kappa) {
      if (!(kappa.is_linear() && (kappa.is_identity() || kappa.coeff() <= 1.0)))
        throw std::invalid_argument("cegis: contraction candidates must be linear with coefficient <= 1");
      for (const auto& gamma : cfg.candidates.gamma) {
        detail::LearnerProblem lp;
        lp.tmpl = &tmpl;
        lp.sys = &sys;
        lp.u_set = &inputs;
        lp.alpha = alpha;
        lp.kappa = kappa;
        lp.gamma = gamma;
        lp.level_gap = cfg.level_gap;

        std::vector<Counterexample> ces;
        std::set<Counterexample> seen;
        double res = cfg.initial_grid_resolution;
        std::vector<double> params(tmpl.parameter_count(), 0.0);
        bool gave_up = false;

        while (iteration < cfg.max_iterations && !gave_up) {
          ++iteration;
          // --- learner ---
          double objective = 0.0;
          if (cfg.learner == CegisConfig::Learner::LeastViolationLP) {
            std::vector<double> dec_inputs;
            for (const auto& ce : ces)
              if (ce.condition == "decrease") dec_inputs.push_back(lp.best_input(params, ce));
            auto sol = lp.solve(ces, dec_inputs);
            if (!sol.feasible) {
              gave_up = true;
              result.failure = "learner linear program infeasible";
              break;
            }
            params.assign(sol.x.begin(), sol.x.begin() + static_cast<long>(tmpl.parameter_count()));
            objective = sol.value;
            if (objective > cfg.margin) {
              gave_up = true;  // cannot satisfy even the counterexamples
              result.failure = "no parameters satisfy the accumulated counterexamples for this class-function choice";
              break;
            }
          } else {
            double best = std::numeric_limits<double>::infinity();
            std::vector<double> best_p = params;
            for (std::size_t s = 0; s < cfg.restart_samples; ++s) {
              std::vector<double> p(tmpl.parameter_count());
              for (std::size_t k = 0; k < p.size(); ++k) {
                std::uniform_real_distribution<double> u(tmpl.parameter_bounds[k].first,
                                                         tmpl.parameter_bounds[k].second);
                p[k] = u(rng);
              }
              Polynomial bb = tmpl.instantiate(p);
              double worst = 0.0;
              for (const auto& ce : ces) {
                if (ce.condition == "output-bound") worst = std::max(worst, alpha(inf_norm(ce.x)) - bb.eval(ce.x));
                // level and decrease violations are folded into the closing
                // grid search; random restart is a fallback learner
              }
              if (worst < best) {
                best = worst;
                best_p = p;
              }
            }
            params = best_p;
            objective = best;
          }

          Polynomial barrier = tmpl.instantiate(params);
          double eu, el;
          fit_levels(barrier, std::min(res, cfg.final_resolution), eu, el);
          LocalCertificate cand = make_candidate(barrier, alpha, kappa, gamma, eu, el);

          // --- oracle ---
          auto ce = counterexample_search(cand, sys, inputs, res, cfg.w_step, cfg.margin, cfg.workers);
          IterationLog lg{iteration, res, objective, ce ? ce->condition : "", ce ? ce->violation : 0.0};
          result.log.push_back(lg);

          if (!ce) {
            if (res > cfg.final_resolution) {
              res = std::max(cfg.final_resolution, res * cfg.refinement_factor);
              continue;
            }
            // Final gate: the verifier must accept the candidate.
            GridSpec fin;
            fin.x_step = cfg.final_resolution;
            fin.w_step = cfg.w_step;
            fin.workers = cfg.workers;
            fin.strict_slack = 0.0;
            Subsystem patched = sys;
            FiniteInputSet fs;
            for (double u : inputs) fs.points.push_back({u});
            patched.input = std::move(fs);
            VerificationReport rep = verify_local(cand, patched, fin);
            if (rep.pass()) {
              result.ok = true;
              result.certificate = cand;
              result.final_report = rep;
              result.counterexamples = ces;
              result.best_violation = 0.0;
              return result;
            }
            // fall through: harvest the verifier's worst condition
            ce = counterexample_search(cand, sys, inputs, cfg.final_resolution, cfg.w_step, cfg.margin, cfg.workers);
            if (!ce) {
              result.failure = "verifier rejected the candidate but no counterexample was recovered";
              gave_up = true;
              break;
            }
          }
          result.best_violation = std::min(result.best_violation, ce->violation);
          if (!seen.insert(*ce).second) {
            if (res > cfg.final_resolution) {
              res = std::max(cfg.final_resolution, res * cfg.refinement_factor);
              continue;
            }
            result.failure = "stalled on a repeated counterexample";
            gave_up = true;
            break;
          }
          ces.push_back(*ce);
          result.counterexamples = ces;
        }
        if (iteration >= cfg.max_iterations) {
          result.failure = "iteration budget exhausted";
          return result;
        }
      }
    }
  }
  if (result.failure.empty()) result.failure = "no class-function candidate produced a certificate";
  return result;
}

inline void write_synthesis_log_csv(const std::vector<IterationLog>& log, std::ostream& os) {
  os << "iteration,resolution,learner_objective,counterexample_condition,violation\n";
  os.precision(12);
  for (const auto& l : log)
    os << l.iteration << "," << l.resolution << "," << l.learner_objective << "," << l.counterexample_condition << ","
       << l.violation << "\n";
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline BarrierTemplate template_from_json(const nlohmann::json& j) {
  BarrierTemplate t;
  for (const auto& m : j.at("basis")) t.basis.push_back(m.get<std::vector<unsigned>>());
  for (const auto& b : j.at("parameter_bounds")) t.parameter_bounds.push_back({b[0].get<double>(), b[1].get<double>()});
  t.validate();
  return t;
}

inline CegisConfig cegis_config_from_json(const nlohmann::json& j) {
  CegisConfig c;
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.initial_grid_resolution = j.value("initial_grid_resolution", c.initial_grid_resolution);
  c.refinement_factor = j.value("refinement_factor", c.refinement_factor);
  c.final_resolution = j.value("final_resolution", c.final_resolution);
  c.strict_slack = j.value("strict_slack", c.strict_slack);
  c.level_gap = j.value("level_gap", c.level_gap);
  c.margin = j.value("margin", c.margin);
  c.w_step = j.value("w_step", c.w_step);
  c.restart_samples = j.value("restart_samples", c.restart_samples);
  c.seed = j.value("seed", c.seed);
  if (j.contains("learner"))
    c.learner = j["learner"].get<std::string>() == "random-restart" ? CegisConfig::Learner::RandomRestart
                                                                    : CegisConfig::Learner::LeastViolationLP;
  if (j.contains("candidates")) {
    const auto& cand = j["candidates"];
    if (cand.contains("alpha")) {
      c.candidates.alpha.clear();
      for (const auto& f : cand["alpha"]) c.candidates.alpha.push_back(kfn_from_json(f));
    }
    if (cand.contains("kappa")) {
      c.candidates.kappa.clear();
      for (const auto& f : cand["kappa"]) c.candidates.kappa.push_back(kfn_from_json(f));
    }
    if (cand.contains("gamma")) {
      c.candidates.gamma.clear();
      for (const auto& f : cand["gamma"]) {
        if (f.is_string() && f.get<std::string>() == "none")
          c.candidates.gamma.push_back(std::nullopt);
        else
          c.candidates.gamma.push_back(kfn_from_json(f));
      }
    }
  }
  return c;
}

}  // namespace cbf
