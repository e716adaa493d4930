#pragma once

#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cbf {

// Class-K-infinity comparison function: continuous, strictly increasing,
// zero at zero, unbounded. Restricted to the closed forms
//   identity, r -> c r, r -> c r^e,
// and compositions of those. Compositions normalize back to a single
// power/linear form, so inversion and ordering stay exact.
class KFn {
 public:
  enum class Form { Identity, Linear, Power, Chain };

  KFn() : form_(Form::Identity) {}

  static KFn identity() { return KFn(); }
  static KFn linear(double c) {
    check_positive(c, "linear coefficient");
    KFn f;
    f.form_ = Form::Linear;
    f.c_ = c;
    return f;
  }
  static KFn power(double c, double e) {
    check_positive(c, "power coefficient");
    check_positive(e, "power exponent");
    if (e == 1.0) return linear(c);
    KFn f;
    f.form_ = Form::Power;
    f.c_ = c;
    f.e_ = e;
    return f;
  }
  // Chain composed left to right with the composition operator:
  // chain({f,g})(r) = f(g(r)). Normalizes to a single closed form.
  static KFn chain(const std::vector<KFn>& fns) {
    KFn acc = identity();
    for (const auto& f : fns) acc = f.then(acc);
    return acc;
  }

  Form form() const { return form_; }
  double coeff() const { return c_; }
  double exponent() const { return form_ == Form::Power ? e_ : 1.0; }
  bool is_identity() const { return form_ == Form::Identity; }
  bool is_linear() const { return form_ == Form::Identity || form_ == Form::Linear; }

  double operator()(double r) const { return eval(r); }

  double eval(double r) const {
    if (r < 0) throw std::domain_error("comparison function evaluated at negative argument");
    switch (form_) {
      case Form::Identity: return r;
      case Form::Linear: return c_ * r;
      case Form::Power: return c_ * std::pow(r, e_);
      case Form::Chain: break;
    }
    throw std::logic_error("unreachable comparison-function form");
  }

  // g.then(h) = h after g; normalizes to a single closed form.
  KFn then(const KFn& outer) const {
    if (is_identity()) return outer;
    if (outer.is_identity()) return *this;
    double ci = c_, ei = exponent();
    double co = outer.c_, eo = outer.exponent();
    // outer(inner(r)) = co * (ci r^ei)^eo = co ci^eo r^(ei eo)
    double c = co * std::pow(ci, eo);
    double e = ei * eo;
    if (e == 1.0) return linear(c);
    return power(c, e);
  }

  KFn inverse() const {
    switch (form_) {
      case Form::Identity: return identity();
      case Form::Linear: return linear(1.0 / c_);
      case Form::Power: return power(std::pow(1.0 / c_, 1.0 / e_), 1.0 / e_);
      case Form::Chain: break;
    }
    throw std::logic_error("unreachable comparison-function form");
  }

  std::string str() const {
    std::ostringstream os;
    os.precision(12);
    switch (form_) {
      case Form::Identity: os << "id"; break;
      case Form::Linear: os << c_ << "*r"; break;
      case Form::Power: os << c_ << "*r^" << e_; break;
      case Form::Chain: os << "chain"; break;
    }
    return os.str();
  }

  bool operator==(const KFn& o) const { return form_ == o.form_ && c_ == o.c_ && exponent() == o.exponent(); }

 private:
  static void check_positive(double v, const char* what) {
    if (!(v > 0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be positive and finite");
  }

  Form form_;
  double c_ = 1.0;
  double e_ = 1.0;  // only meaningful for Form::Power
};

inline KFn compose(const KFn& f, const KFn& g) { return g.then(f); }  // (f o g)(r) = f(g(r))
inline KFn inverse(const KFn& f) { return f.inverse(); }

enum class Order { Proven, Refuted, Unknown };

// Is f(s) < s for all s > 0?  Exact for the closed forms: linear iff c < 1;
// a genuine power (e != 1) always escapes above the identity somewhere on
// (0, inf), so it is refuted unless a finite domain bound is declared.
inline Order less_than_identity_ord(const KFn& f, double domain_hi = 0.0) {
  switch (f.form()) {
    case KFn::Form::Identity: return Order::Refuted;  // not strict
    case KFn::Form::Linear: return f.coeff() < 1.0 ? Order::Proven : Order::Refuted;
    case KFn::Form::Power: {
      double c = f.coeff(), e = f.exponent();
      if (e > 1.0) {
        // c s^e < s on (0, R] iff c R^(e-1) < 1
        if (domain_hi > 0.0) return c * std::pow(domain_hi, e - 1.0) < 1.0 ? Order::Proven : Order::Refuted;
        return Order::Refuted;  // fails for large s
      }
      return Order::Refuted;  // e < 1: fails near zero regardless of bound
    }
    case KFn::Form::Chain: return Order::Unknown;
  }
  return Order::Unknown;
}

inline bool less_than_identity(const KFn& f, double domain_hi = 0.0) {
  return less_than_identity_ord(f, domain_hi) == Order::Proven;
}

// JSON forms: "identity", {"linear": c}, {"power": [c, e]}, {"chain": [...]}
inline nlohmann::json to_json(const KFn& f) {
  switch (f.form()) {
    case KFn::Form::Identity: return "identity";
    case KFn::Form::Linear: return nlohmann::json{{"linear", f.coeff()}};
    case KFn::Form::Power: return nlohmann::json{{"power", {f.coeff(), f.exponent()}}};
    case KFn::Form::Chain: break;
  }
  throw std::logic_error("unreachable comparison-function form");
}

inline KFn kfn_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "identity") return KFn::identity();
    throw std::invalid_argument("comparison function json: unknown string form '" + j.get<std::string>() + "'");
  }
  if (j.contains("linear")) return KFn::linear(j["linear"].get<double>());
  if (j.contains("power")) return KFn::power(j["power"][0].get<double>(), j["power"][1].get<double>());
  if (j.contains("chain")) {
    std::vector<KFn> fns;
    for (const auto& e : j["chain"]) fns.push_back(kfn_from_json(e));
    return KFn::chain(fns);
  }
  throw std::invalid_argument("comparison function json: expected identity/linear/power/chain");
}

}  // namespace cbf
