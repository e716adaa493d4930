#pragma once

#include <map>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cbf/gain.hpp"
#include "cbf/kfn.hpp"
#include "cbf/polynomial.hpp"
#include "cbf/system.hpp"

namespace cbf {

inline double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Stationary polynomial state feedback, one polynomial per input coordinate.
struct PolynomialController {
  std::vector<Polynomial> outputs;
};

// Finite-input rule determinized at a fixed reference internal input w*:
// the smallest input satisfying the additive decrease bound at w*, falling
// back to the input of least bound violation (equivalently least barrier
// value at the successor) when no input satisfies it. Ties break toward the
// smaller input.
struct DeterminizedController {
  Polynomial barrier;
  KFn kappa_hat = KFn::linear(0.5);
  std::optional<KFn> gamma_hat;
  std::vector<double> inputs;            // sorted ascending, scalar input set
  std::optional<double> w_star_fill;     // broadcast reference value
  std::vector<double> w_star;            // explicit reference (overrides fill)

  std::vector<double> reference(const Subsystem& s) const {
    if (!w_star.empty()) {
      if (w_star.size() != s.internal_dim)
        throw std::invalid_argument("determinized controller: reference dimension mismatch");
      return w_star;
    }
    double fill;
    if (w_star_fill) {
      fill = *w_star_fill;
    } else {
      // default: centroid of the internal input region
      if (s.internal_region.empty()) throw std::invalid_argument("determinized controller: no reference available");
      const Box& b = s.internal_region.boxes.front();
      fill = 0.5 * (b.lo[0] + b.hi[0]);
      std::vector<double> w(s.internal_dim);
      for (std::size_t d = 0; d < s.internal_dim; ++d) w[d] = 0.5 * (b.lo[d] + b.hi[d]);
      return w;
    }
    return std::vector<double>(s.internal_dim, fill);
  }
};

struct ZeroController {};

// Controller attached to one subsystem; outputs are kept inside the declared
// input set (box clamp / nearest finite element).
class Controller {
 public:
  Controller() : impl_(ZeroController{}) {}
  Controller(PolynomialController c) : impl_(std::move(c)) {}
  Controller(DeterminizedController c) : impl_(std::move(c)) {
    auto& d = std::get<DeterminizedController>(impl_);
    std::sort(d.inputs.begin(), d.inputs.end());
    if (d.inputs.empty()) throw std::invalid_argument("determinized controller: empty input set");
  }

  bool is_zero() const { return std::holds_alternative<ZeroController>(impl_); }
  bool is_determinized() const { return std::holds_alternative<DeterminizedController>(impl_); }
  const DeterminizedController* determinized() const { return std::get_if<DeterminizedController>(&impl_); }
  const PolynomialController* polynomial() const { return std::get_if<PolynomialController>(&impl_); }

  std::vector<double> eval(const Subsystem& s, std::span<const double> x) const {
    std::vector<double> u(s.input_dim, 0.0);
    if (const auto* pc = std::get_if<PolynomialController>(&impl_)) {
      if (pc->outputs.size() != s.input_dim)
        throw std::invalid_argument("polynomial controller: output count does not match input dimension");
      for (std::size_t k = 0; k < u.size(); ++k) u[k] = pc->outputs[k].eval(x);
    } else if (const auto* dc = std::get_if<DeterminizedController>(&impl_)) {
      if (s.input_dim != 1) throw std::invalid_argument("determinized controller: scalar input sets only");
      u[0] = determinized_input(*dc, s, x);
      return u;  // already a member of the input set
    }
    clamp(s, u);
    return u;
  }

 private:
  static double determinized_input(const DeterminizedController& dc, const Subsystem& s, std::span<const double> x) {
    std::vector<double> wref = dc.reference(s);
    double bound = dc.kappa_hat(dc.barrier.eval(x));
    if (dc.gamma_hat) bound += (*dc.gamma_hat)(inf_norm(wref));
    std::vector<double> next(s.state_dim);
    double best_u = dc.inputs.front();
    double best_val = std::numeric_limits<double>::infinity();
    for (double cand : dc.inputs) {
      double uv[1] = {cand};
      s.transition(x, std::span<const double>(uv, 1), wref, next);
      double val = dc.barrier.eval(next);
      if (val <= bound) return cand;  // smallest feasible input wins
      if (val < best_val - 1e-15) {
        best_val = val;
        best_u = cand;
      }
    }
    return best_u;  // least violation of the bound (bound is input-independent)
  }

  void clamp(const Subsystem& s, std::vector<double>& u) const {
    if (std::holds_alternative<Box>(s.input)) {
      const Box& b = std::get<Box>(s.input);
      for (std::size_t d = 0; d < u.size(); ++d) u[d] = std::min(std::max(u[d], b.lo[d]), b.hi[d]);
      return;
    }
    const auto& pts = std::get<FiniteInputSet>(s.input).points;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> pick = u;
    for (const auto& p : pts) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) d2 += (p[k] - u[k]) * (p[k] - u[k]);
      if (d2 < best - 1e-15 || (std::abs(d2 - best) <= 1e-15 && p < pick)) {
        best = d2;
        pick = p;
      }
    }
    u = pick;
  }

  std::variant<ZeroController, PolynomialController, DeterminizedController> impl_;
};

inline nlohmann::json to_json(const Controller& c) {
  if (c.is_zero()) return nlohmann::json{{"zero", true}};
  if (const auto* pc = c.polynomial()) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : pc->outputs) arr.push_back(to_json(p));
    return nlohmann::json{{"polynomial", arr}};
  }
  const auto* dc = c.determinized();
  nlohmann::json j;
  j["determinized"]["barrier"] = to_json(dc->barrier);
  j["determinized"]["kappa_hat"] = to_json(dc->kappa_hat);
  if (dc->gamma_hat) j["determinized"]["gamma_hat"] = to_json(*dc->gamma_hat);
  j["determinized"]["inputs"] = dc->inputs;
  if (!dc->w_star.empty())
    j["determinized"]["w_star"] = dc->w_star;
  else if (dc->w_star_fill)
    j["determinized"]["w_star"] = nlohmann::json{{"fill", *dc->w_star_fill}};
  return j;
}

inline Controller controller_from_json(const nlohmann::json& j) {
  if (j.contains("zero")) return Controller();
  if (j.contains("polynomial")) {
    PolynomialController pc;
    for (const auto& p : j["polynomial"]) pc.outputs.push_back(polynomial_from_json(p));
    return Controller(std::move(pc));
  }
  if (j.contains("determinized")) {
    const auto& d = j["determinized"];
    DeterminizedController dc;
    dc.barrier = polynomial_from_json(d.at("barrier"));
    dc.kappa_hat = kfn_from_json(d.at("kappa_hat"));
    if (d.contains("gamma_hat")) dc.gamma_hat = kfn_from_json(d["gamma_hat"]);
    dc.inputs = d.at("inputs").get<std::vector<double>>();
    if (d.contains("w_star")) {
      if (d["w_star"].is_object())
        dc.w_star_fill = d["w_star"].at("fill").get<double>();
      else
        dc.w_star = d["w_star"].get<std::vector<double>>();
    }
    return Controller(std::move(dc));
  }
  throw std::invalid_argument("controller json: expected zero/polynomial/determinized");
}

}  // namespace cbf
