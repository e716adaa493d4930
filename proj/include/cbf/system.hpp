#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <cctype>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cbf/labeling.hpp"
#include "cbf/parallel.hpp"
#include "cbf/region.hpp"

namespace cbf {

// ---------------------------------------------------------------------------
// Expression grammar for custom transition/output maps:
//   expr   := term (('+'|'-') term)*
//   term   := factor ('*' factor)*
//   factor := number | 'sin(' expr ')' | 'cos(' expr ')' | var | '(' expr ')' | '-' factor
//   var    := ('x'|'u'|'w') digits
// ---------------------------------------------------------------------------
class Expression {
 public:
  static Expression parse(const std::string& text) {
    Parser p{text, 0};
    Expression e;
    e.root_ = p.expr();
    p.skip_ws();
    if (p.pos != text.size()) throw std::invalid_argument("expression: trailing input at '" + text.substr(p.pos) + "'");
    e.text_ = text;
    return e;
  }

  double eval(std::span<const double> x, std::span<const double> u, std::span<const double> w) const {
    return eval_node(*root_, x, u, w);
  }

  const std::string& text() const { return text_; }

 private:
  struct Node {
    enum class Op { Const, Var, Add, Sub, Mul, Neg, Sin, Cos } op;
    double value = 0.0;
    char var_kind = 'x';
    std::size_t var_index = 0;
    std::unique_ptr<Node> a, b;
  };

  static double eval_node(const Node& n, std::span<const double> x, std::span<const double> u,
                          std::span<const double> w) {
    switch (n.op) {
      case Node::Op::Const: return n.value;
      case Node::Op::Var: {
        std::span<const double> v = n.var_kind == 'x' ? x : (n.var_kind == 'u' ? u : w);
        if (n.var_index >= v.size())
          throw std::out_of_range(std::string("expression: symbol ") + n.var_kind + std::to_string(n.var_index) +
                                  " out of range");
        return v[n.var_index];
      }
      case Node::Op::Add: return eval_node(*n.a, x, u, w) + eval_node(*n.b, x, u, w);
      case Node::Op::Sub: return eval_node(*n.a, x, u, w) - eval_node(*n.b, x, u, w);
      case Node::Op::Mul: return eval_node(*n.a, x, u, w) * eval_node(*n.b, x, u, w);
      case Node::Op::Neg: return -eval_node(*n.a, x, u, w);
      case Node::Op::Sin: return std::sin(eval_node(*n.a, x, u, w));
      case Node::Op::Cos: return std::cos(eval_node(*n.a, x, u, w));
    }
    throw std::logic_error("expression: unreachable op");
  }

  struct Parser {
    const std::string& s;
    std::size_t pos;

    void skip_ws() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool eat(char c) {
      skip_ws();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    std::unique_ptr<Node> expr() {
      auto lhs = term();
      for (;;) {
        if (eat('+')) {
          auto n = std::make_unique<Node>();
          n->op = Node::Op::Add;
          n->a = std::move(lhs);
          n->b = term();
          lhs = std::move(n);
        } else if (eat('-')) {
          auto n = std::make_unique<Node>();
          n->op = Node::Op::Sub;
          n->a = std::move(lhs);
          n->b = term();
          lhs = std::move(n);
        } else {
          return lhs;
        }
      }
    }

    std::unique_ptr<Node> term() {
      auto lhs = factor();
      while (eat('*')) {
        auto n = std::make_unique<Node>();
        n->op = Node::Op::Mul;
        n->a = std::move(lhs);
        n->b = factor();
        lhs = std::move(n);
      }
      return lhs;
    }

    std::unique_ptr<Node> factor() {
      skip_ws();
      if (pos >= s.size()) throw std::invalid_argument("expression: unexpected end of input");
      char c = s[pos];
      if (c == '-') {
        ++pos;
        auto n = std::make_unique<Node>();
        n->op = Node::Op::Neg;
        n->a = factor();
        return n;
      }
      if (c == '(') {
        ++pos;
        auto n = expr();
        if (!eat(')')) throw std::invalid_argument("expression: missing ')'");
        return n;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t end = pos;
        while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.' ||
                                  s[end] == 'e' || s[end] == 'E' ||
                                  ((s[end] == '+' || s[end] == '-') && (s[end - 1] == 'e' || s[end - 1] == 'E'))))
          ++end;
        auto n = std::make_unique<Node>();
        n->op = Node::Op::Const;
        n->value = std::stod(s.substr(pos, end - pos));
        pos = end;
        return n;
      }
      if (s.compare(pos, 4, "sin(") == 0 || s.compare(pos, 4, "cos(") == 0) {
        bool is_sin = s[pos] == 's';
        pos += 4;
        auto n = std::make_unique<Node>();
        n->op = is_sin ? Node::Op::Sin : Node::Op::Cos;
        n->a = expr();
        if (!eat(')')) throw std::invalid_argument("expression: missing ')'");
        return n;
      }
      if (c == 'x' || c == 'u' || c == 'w') {
        std::size_t end = pos + 1;
        while (end < s.size() && std::isdigit(static_cast<unsigned char>(s[end]))) ++end;
        if (end == pos + 1) throw std::invalid_argument("expression: symbol needs an index, e.g. x0");
        auto n = std::make_unique<Node>();
        n->op = Node::Op::Var;
        n->var_kind = c;
        n->var_index = std::stoul(s.substr(pos + 1, end - pos - 1));
        pos = end;
        return n;
      }
      throw std::invalid_argument(std::string("expression: unexpected character '") + c + "'");
    }
  };

  std::shared_ptr<Node> root_;
  std::string text_;
};

// ---------------------------------------------------------------------------
// Subsystems and their interconnection
// ---------------------------------------------------------------------------

struct FiniteInputSet {
  std::vector<std::vector<double>> points;  // each point has input_dim entries
};
using InputSpec = std::variant<Box, FiniteInputSet>;

using TransitionFn =
    std::function<void(std::span<const double> x, std::span<const double> u, std::span<const double> w,
                       std::span<double> out)>;

// One control subsystem: x' = f(x, u, w), y_j = h_j(x). The output toward a
// wired neighbor defaults to the identity (full state block); h toward the
// subsystem itself is the identity by definition.
struct Subsystem {
  std::size_t state_dim = 1;
  std::size_t input_dim = 1;
  std::size_t internal_dim = 0;
  InputSpec input = Box::interval(0.0, 0.0);
  Region state_region;
  Region internal_region;
  TransitionFn transition;
  // optional non-identity output expressions toward specific neighbors
  std::map<std::size_t, std::vector<Expression>> output_overrides;

  void output(std::size_t self, std::size_t target, std::span<const double> x, std::span<double> out) const {
    if (target != self) {
      auto it = output_overrides.find(target);
      if (it != output_overrides.end()) {
        for (std::size_t k = 0; k < it->second.size(); ++k) out[k] = it->second[k].eval(x, {}, {});
        return;
      }
    }
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k];
  }

  bool input_admissible(std::span<const double> u, double tol = 1e-9) const {
    if (std::holds_alternative<Box>(input)) {
      const Box& b = std::get<Box>(input);
      for (std::size_t d = 0; d < u.size(); ++d)
        if (u[d] < b.lo[d] - tol || u[d] > b.hi[d] + tol) return false;
      return true;
    }
    for (const auto& p : std::get<FiniteInputSet>(input).points) {
      bool eq = true;
      for (std::size_t d = 0; d < u.size(); ++d) eq = eq && std::abs(p[d] - u[d]) <= tol;
      if (eq) return true;
    }
    return false;
  }
};

struct StepWarnings {
  bool state_out_of_region = false;
  bool input_out_of_spec = false;
  bool internal_out_of_region = false;
  bool any() const { return state_out_of_region || input_out_of_spec || internal_out_of_region; }
};

// Exact transition evaluation; region membership is soft-checked.
inline std::vector<double> step_subsystem(const Subsystem& s, std::span<const double> x, std::span<const double> u,
                                          std::span<const double> w, StepWarnings* warn = nullptr) {
  if (x.size() != s.state_dim || u.size() != s.input_dim || w.size() != s.internal_dim)
    throw std::invalid_argument("step_subsystem: dimension mismatch");
  if (warn) {
    if (!s.state_region.empty() && !s.state_region.contains(x)) warn->state_out_of_region = true;
    if (!s.input_admissible(u)) warn->input_out_of_spec = true;
    if (s.internal_dim > 0 && !s.internal_region.empty() && !s.internal_region.contains(w))
      warn->internal_out_of_region = true;
  }
  std::vector<double> out(s.state_dim, 0.0);
  s.transition(x, u, w, std::span<double>(out));
  return out;
}

// N interconnected subsystems with the wiring constraint w_ij = y_ji.
// Homogeneous networks share one subsystem prototype. A builder may install
// a bulk stepping routine (used by `step`) that avoids materializing the
// gathered internal inputs; `step_gather` always runs the generic path.
class InterconnectedSystem {
 public:
  InterconnectedSystem() = default;

  static InterconnectedSystem homogeneous(Subsystem proto, std::size_t n,
                                          std::function<std::vector<std::size_t>(std::size_t)> feeders) {
    InterconnectedSystem s;
    s.subs_.push_back(std::move(proto));
    s.n_ = n;
    s.feeders_ = std::move(feeders);
    s.init_offsets();
    return s;
  }

  static InterconnectedSystem heterogeneous(std::vector<Subsystem> subs,
                                            std::function<std::vector<std::size_t>(std::size_t)> feeders) {
    InterconnectedSystem s;
    s.n_ = subs.size();
    s.subs_ = std::move(subs);
    s.feeders_ = std::move(feeders);
    s.init_offsets();
    return s;
  }

  std::size_t blocks() const { return n_; }
  std::size_t state_dim() const { return total_dim_; }
  std::size_t input_dim() const { return total_input_dim_; }
  const Subsystem& sub(std::size_t i) const { return subs_.size() == 1 ? subs_[0] : subs_.at(i); }
  bool homogeneous_network() const { return subs_.size() == 1 && n_ > 1; }
  std::vector<std::size_t> feeders(std::size_t i) const { return feeders_ ? feeders_(i) : std::vector<std::size_t>{}; }

  std::span<const double> block(std::span<const double> x, std::size_t i) const {
    return x.subspan(offset_[i], sub(i).state_dim);
  }
  std::span<const double> input_block(std::span<const double> u, std::size_t i) const {
    return u.subspan(input_offset_[i], sub(i).input_dim);
  }

  void set_bulk_step(std::function<void(std::span<const double>, std::span<const double>, std::span<double>)> f) {
    bulk_ = std::move(f);
  }
  void set_post_step(std::function<void(std::span<double>)> f) { post_ = std::move(f); }

  // Def.-2 range containment: every feeder output region must fit inside the
  // matching block of the consumer's internal region. Checked on bounding
  // intervals; builders satisfy it by construction.
  void validate_wiring() const {
    for (std::size_t i = 0; i < n_; ++i) {
      const Subsystem& si = sub(i);
      if (si.internal_region.empty()) continue;
      std::size_t off = 0;
      for (std::size_t j : feeders(i)) {
        const Subsystem& sj = sub(j);
        for (std::size_t d = 0; d < sj.state_dim; ++d) {
          double ylo = std::numeric_limits<double>::infinity(), yhi = -ylo;
          for (const auto& b : sj.state_region.boxes) {
            ylo = std::min(ylo, b.lo[d]);
            yhi = std::max(yhi, b.hi[d]);
          }
          for (const auto& wb : si.internal_region.boxes)
            if (ylo < wb.lo[off + d] - 1e-12 || yhi > wb.hi[off + d] + 1e-12)
              throw std::invalid_argument("interconnection: output range of subsystem " + std::to_string(j) +
                                          " exceeds internal input range of subsystem " + std::to_string(i));
        }
        off += sj.state_dim;
      }
      if (off != si.internal_dim)
        throw std::invalid_argument("interconnection: feeder dimensions do not sum to internal_dim of subsystem " +
                                    std::to_string(i));
    }
  }

  // Synchronous update through the generic gather path.
  std::vector<double> step_gather(std::span<const double> x, std::span<const double> u, unsigned workers = 0) const {
    check_dims(x, u);
    std::vector<double> out(total_dim_, 0.0);
    parallel_chunks(
        n_,
        [&](std::size_t, std::size_t lo, std::size_t hi) {
          std::vector<double> w;
          for (std::size_t i = lo; i < hi; ++i) {
            const Subsystem& si = sub(i);
            w.assign(si.internal_dim, 0.0);
            std::size_t off = 0;
            for (std::size_t j : feeders(i)) {
              const Subsystem& sj = sub(j);
              sj.output(j, i, block(x, j), std::span<double>(w).subspan(off, sj.state_dim));
              off += sj.state_dim;
            }
            si.transition(block(x, i), input_block(u, i), w, std::span<double>(out).subspan(offset_[i], si.state_dim));
          }
        },
        workers);
    if (post_) post_(out);
    return out;
  }

  std::vector<double> step(std::span<const double> x, std::span<const double> u, unsigned workers = 0) const {
    if (bulk_) {
      check_dims(x, u);
      std::vector<double> out(total_dim_, 0.0);
      bulk_(x, u, out);
      if (post_) post_(out);
      return out;
    }
    return step_gather(x, u, workers);
  }

 private:
  void check_dims(std::span<const double> x, std::span<const double> u) const {
    if (x.size() != total_dim_ || u.size() != total_input_dim_)
      throw std::invalid_argument("interconnected step: dimension mismatch");
  }
  void init_offsets() {
    offset_.resize(n_);
    input_offset_.resize(n_);
    total_dim_ = 0;
    total_input_dim_ = 0;
    for (std::size_t i = 0; i < n_; ++i) {
      offset_[i] = total_dim_;
      input_offset_[i] = total_input_dim_;
      total_dim_ += sub(i).state_dim;
      total_input_dim_ += sub(i).input_dim;
    }
  }

  std::vector<Subsystem> subs_;
  std::size_t n_ = 0;
  std::function<std::vector<std::size_t>(std::size_t)> feeders_;
  std::function<void(std::span<const double>, std::span<const double>, std::span<double>)> bulk_;
  std::function<void(std::span<double>)> post_;
  std::vector<std::size_t> offset_, input_offset_;
  std::size_t total_dim_ = 0, total_input_dim_ = 0;
};

// ---------------------------------------------------------------------------
// Custom system JSON
// ---------------------------------------------------------------------------

inline Subsystem subsystem_from_json(const nlohmann::json& j) {
  Subsystem s;
  s.state_dim = j.value("state_dim", 1u);
  s.input_dim = j.value("input_dim", 1u);
  s.internal_dim = j.value("internal_dim", 0u);
  if (j.contains("state_region")) s.state_region = region_from_json(j["state_region"], s.state_dim);
  if (j.contains("internal_region")) s.internal_region = region_from_json(j["internal_region"], s.internal_dim);
  const auto& in = j.at("input");
  if (in.contains("box")) {
    s.input = box_from_json(in["box"]);
  } else if (in.contains("finite")) {
    FiniteInputSet fs;
    for (const auto& p : in["finite"]) {
      if (p.is_number())
        fs.points.push_back({p.get<double>()});
      else
        fs.points.push_back(p.get<std::vector<double>>());
    }
    s.input = std::move(fs);
  } else {
    throw std::invalid_argument("subsystem json: input must be 'box' or 'finite'");
  }
  auto exprs = std::make_shared<std::vector<Expression>>();
  for (const auto& e : j.at("transition")) exprs->push_back(Expression::parse(e.get<std::string>()));
  if (exprs->size() != s.state_dim) throw std::invalid_argument("subsystem json: one transition expression per state dim");
  s.transition = [exprs](std::span<const double> x, std::span<const double> u, std::span<const double> w,
                         std::span<double> out) {
    for (std::size_t k = 0; k < exprs->size(); ++k) out[k] = (*exprs)[k].eval(x, u, w);
  };
  if (j.contains("outputs"))
    for (const auto& [target, list] : j["outputs"].items()) {
      std::vector<Expression> os;
      for (const auto& e : list) os.push_back(Expression::parse(e.get<std::string>()));
      s.output_overrides.emplace(std::stoul(target), std::move(os));
    }
  return s;
}

inline InterconnectedSystem system_from_json(const nlohmann::json& j) {
  std::size_t n = j.at("n").get<std::size_t>();
  auto wiring = j.value("wiring", nlohmann::json{{"kind", "none"}});
  std::string kind = wiring.value("kind", "none");
  std::function<std::vector<std::size_t>(std::size_t)> feeders;
  if (kind == "ring") {
    feeders = [n](std::size_t i) {
      return std::vector<std::size_t>{(i + n - 1) % n, (i + 1) % n};
    };
  } else if (kind == "all") {
    feeders = [n](std::size_t i) {
      std::vector<std::size_t> f;
      for (std::size_t j2 = 0; j2 < n; ++j2)
        if (j2 != i) f.push_back(j2);
      return f;
    };
  } else if (kind == "pairs") {
    auto pairs = wiring.at("pairs").get<std::vector<std::vector<std::size_t>>>();
    auto lists = std::make_shared<std::vector<std::vector<std::size_t>>>(n);
    for (const auto& p : pairs) (*lists)[p[0]].push_back(p[1]);  // p = [consumer, producer]
    for (auto& l : *lists) std::sort(l.begin(), l.end());
    feeders = [lists](std::size_t i) { return (*lists)[i]; };
  } else if (kind == "none") {
    feeders = [](std::size_t) { return std::vector<std::size_t>{}; };
  } else {
    throw std::invalid_argument("system json: unknown wiring kind '" + kind + "'");
  }

  InterconnectedSystem sys;
  if (j.contains("subsystem")) {
    sys = InterconnectedSystem::homogeneous(subsystem_from_json(j["subsystem"]), n, feeders);
  } else {
    std::vector<Subsystem> subs;
    for (const auto& js : j.at("subsystems")) subs.push_back(subsystem_from_json(js));
    if (subs.size() != n) throw std::invalid_argument("system json: 'n' does not match subsystem count");
    sys = InterconnectedSystem::heterogeneous(std::move(subs), feeders);
  }
  sys.validate_wiring();
  return sys;
}

}  // namespace cbf
