#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "cbf/controller.hpp"
#include "cbf/gain.hpp"
#include "cbf/kfn.hpp"
#include "cbf/polynomial.hpp"
#include "cbf/region.hpp"

namespace cbf {

// Per-subsystem barrier certificate: the barrier polynomial, its comparison
// functions (additive hats and/or max-form), the level constants and the
// region geometry it separates. `psi` parametrizes the additive-to-max
// conversion when only hats are given.
struct LocalCertificate {
  Polynomial barrier;
  KFn alpha_hat = KFn::linear(1.0);
  std::optional<KFn> kappa_hat;
  std::optional<KFn> gamma_hat;
  std::optional<KFn> kappa;
  std::optional<KFn> gamma_w;
  KFn psi = default_psi();
  double eps_upper = 0.0;
  double eps_lower = 0.0;
  Region region_a, region_b, state_region, internal_region;
  std::optional<Controller> controller;

  std::size_t dimension() const { return barrier.dimension; }

  MaxFormGains max_form() const {
    if (kappa) {
      MaxFormGains g{*kappa, gamma_w};
      return g;
    }
    if (!kappa_hat) throw std::invalid_argument("certificate: neither max-form nor additive gains present");
    return max_form_conversion(*kappa_hat, gamma_hat, psi);
  }

  void validate() const {
    if (eps_upper < 0 || eps_lower < 0) throw std::invalid_argument("certificate: level constants must be >= 0");
    if (!kappa && !kappa_hat) throw std::invalid_argument("certificate: missing contraction function");
    auto inside = [this](const Region& r, const char* what) {
      for (const auto& rb : r.boxes) {
        bool ok = false;
        for (const auto& sb : state_region.boxes) ok = ok || sb.contains_box(rb);
        if (!ok) throw std::invalid_argument(std::string("certificate: ") + what + " leaves the state region");
      }
    };
    inside(region_a, "initial region");
    inside(region_b, "unsafe region");
  }
};

// Evaluation of the barrier polynomial itself.
inline double eval_barrier(const Polynomial& b, std::span<const double> x) { return b.eval(x); }

// Composition of local certificates under rescaling functions phi_i:
//   B(x) = max_i phi_i^-1(B_i(x_i)),  eps1/eps2 from the rescaled levels.
// Homogeneous networks store one shared local (and phi) for all blocks.
struct ComposedCertificate {
  std::vector<LocalCertificate> locals;
  std::vector<KFn> phis;
  std::size_t blocks = 0;  // 0 -> locals.size()
  double eps1 = 0.0;
  double eps2 = 0.0;

  std::size_t count() const { return blocks ? blocks : locals.size(); }
  const LocalCertificate& local(std::size_t i) const { return locals.size() == 1 ? locals[0] : locals.at(i); }
  const KFn& phi(std::size_t i) const { return phis.size() == 1 ? phis[0] : phis.at(i); }
};

inline nlohmann::ordered_json to_json(const LocalCertificate& c) {
  nlohmann::ordered_json j;
  j["barrier"] = to_json(c.barrier);
  j["alpha_hat"] = to_json(c.alpha_hat);
  if (c.kappa_hat) j["kappa_hat"] = to_json(*c.kappa_hat);
  if (c.gamma_hat) j["gamma_hat"] = to_json(*c.gamma_hat);
  if (c.kappa) j["kappa"] = to_json(*c.kappa);
  if (c.gamma_w) j["gamma_w"] = to_json(*c.gamma_w);
  if (!(c.psi == default_psi())) j["psi"] = to_json(c.psi);
  j["eps_upper"] = c.eps_upper;
  j["eps_lower"] = c.eps_lower;
  j["region_a"] = to_json(c.region_a);
  j["region_b"] = to_json(c.region_b);
  j["state_region"] = to_json(c.state_region);
  j["internal_region"] = to_json(c.internal_region);
  if (c.controller) j["controller"] = to_json(*c.controller);
  return j;
}

// `internal_dim` resolves {"uniform": ...} internal regions whose dimension
// depends on the network size; pass 0 when not applicable.
inline LocalCertificate certificate_from_json(const nlohmann::json& j, std::size_t internal_dim = 0) {
  LocalCertificate c;
  c.barrier = polynomial_from_json(j.at("barrier"));
  c.alpha_hat = kfn_from_json(j.at("alpha_hat"));
  if (j.contains("kappa_hat")) c.kappa_hat = kfn_from_json(j["kappa_hat"]);
  if (j.contains("gamma_hat")) c.gamma_hat = kfn_from_json(j["gamma_hat"]);
  if (j.contains("kappa")) c.kappa = kfn_from_json(j["kappa"]);
  if (j.contains("gamma_w")) c.gamma_w = kfn_from_json(j["gamma_w"]);
  if (j.contains("psi")) c.psi = kfn_from_json(j["psi"]);
  c.eps_upper = j.at("eps_upper").get<double>();
  c.eps_lower = j.at("eps_lower").get<double>();
  std::size_t dim = c.barrier.dimension;
  c.region_a = region_from_json(j.at("region_a"), dim);
  c.region_b = region_from_json(j.at("region_b"), dim);
  c.state_region = region_from_json(j.at("state_region"), dim);
  if (j.contains("internal_region")) c.internal_region = region_from_json(j["internal_region"], internal_dim);
  if (j.contains("controller")) c.controller = controller_from_json(j["controller"]);
  c.validate();
  return c;
}

}  // namespace cbf
