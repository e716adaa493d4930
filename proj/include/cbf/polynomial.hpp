#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace cbf {

// Multivariate polynomial in sparse monomial form.
struct Polynomial {
  struct Term {
    double coeff = 0.0;
    std::vector<unsigned> exponents;  // one entry per variable
  };

  std::size_t dimension = 0;
  std::vector<Term> terms;

  Polynomial() = default;
  Polynomial(std::size_t dim, std::vector<Term> ts) : dimension(dim), terms(std::move(ts)) { normalize(); }

  // 1-D helper: coefficients in descending degree, e.g. {a,b,c} -> a x^2 + b x + c.
  static Polynomial univariate(const std::vector<double>& coeffs_desc) {
    Polynomial p;
    p.dimension = 1;
    unsigned deg = coeffs_desc.empty() ? 0 : static_cast<unsigned>(coeffs_desc.size() - 1);
    for (std::size_t i = 0; i < coeffs_desc.size(); ++i)
      if (coeffs_desc[i] != 0.0) p.terms.push_back({coeffs_desc[i], {static_cast<unsigned>(deg - i)}});
    return p;
  }

  void normalize() {
    std::map<std::vector<unsigned>, double> acc;
    for (auto& t : terms) {
      if (t.exponents.size() != dimension)
        throw std::invalid_argument("polynomial: exponent vector does not match dimension");
      acc[t.exponents] += t.coeff;
    }
    terms.clear();
    for (auto& [e, c] : acc)
      if (c != 0.0) terms.push_back({c, e});
  }

  double eval(std::span<const double> x) const {
    if (x.size() != dimension) throw std::invalid_argument("polynomial: dimension mismatch");
    double s = 0.0;
    for (const auto& t : terms) {
      double m = t.coeff;
      for (std::size_t d = 0; d < dimension; ++d) {
        unsigned e = t.exponents[d];
        if (e == 0) continue;
        if (e == 1)
          m *= x[d];
        else if (e == 2)
          m *= x[d] * x[d];
        else
          m *= std::pow(x[d], static_cast<double>(e));
      }
      s += m;
    }
    return s;
  }

  double eval1(double x) const { return eval(std::span<const double>(&x, 1)); }

  unsigned degree() const {
    unsigned deg = 0;
    for (const auto& t : terms) {
      unsigned s = 0;
      for (unsigned e : t.exponents) s += e;
      deg = std::max(deg, s);
    }
    return deg;
  }
};

inline nlohmann::json to_json(const Polynomial& p) {
  nlohmann::json j;
  j["dimension"] = p.dimension;
  j["terms"] = nlohmann::json::array();
  for (const auto& t : p.terms) j["terms"].push_back({{"coeff", t.coeff}, {"exponents", t.exponents}});
  return j;
}

inline Polynomial polynomial_from_json(const nlohmann::json& j) {
  Polynomial p;
  p.dimension = j.at("dimension").get<std::size_t>();
  for (const auto& t : j.at("terms")) {
    Polynomial::Term term;
    term.coeff = t.at("coeff").get<double>();
    term.exponents = t.at("exponents").get<std::vector<unsigned>>();
    p.terms.push_back(std::move(term));
  }
  p.normalize();
  return p;
}

}  // namespace cbf
