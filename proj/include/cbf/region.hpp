#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cbf {

// Closed axis-aligned interval product. Regions are finite unions of boxes.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  Box() = default;
  Box(std::vector<double> l, std::vector<double> h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("box: lo/hi dimension mismatch");
    for (std::size_t d = 0; d < lo.size(); ++d)
      if (lo[d] > hi[d]) throw std::invalid_argument("box: lo > hi in dimension " + std::to_string(d));
  }
  static Box interval(double l, double h) { return Box({l}, {h}); }
  static Box uniform(double l, double h, std::size_t dim) {
    return Box(std::vector<double>(dim, l), std::vector<double>(dim, h));
  }

  std::size_t dimension() const { return lo.size(); }

  bool contains(std::span<const double> x) const {
    if (x.size() != lo.size()) return false;
    for (std::size_t d = 0; d < lo.size(); ++d)
      if (x[d] < lo[d] || x[d] > hi[d]) return false;
    return true;
  }

  bool intersects(const Box& o) const {
    if (o.dimension() != dimension()) throw std::invalid_argument("box: dimension mismatch");
    for (std::size_t d = 0; d < lo.size(); ++d)
      if (hi[d] < o.lo[d] || o.hi[d] < lo[d]) return false;
    return true;
  }

  bool contains_box(const Box& o) const {
    if (o.dimension() != dimension()) return false;
    for (std::size_t d = 0; d < lo.size(); ++d)
      if (o.lo[d] < lo[d] || o.hi[d] > hi[d]) return false;
    return true;
  }

  double width(std::size_t d) const { return hi[d] - lo[d]; }
};

struct Region {
  std::vector<Box> boxes;

  Region() = default;
  explicit Region(Box b) { boxes.push_back(std::move(b)); }
  explicit Region(std::vector<Box> bs) : boxes(std::move(bs)) {}

  bool empty() const {
    return boxes.empty();
  }
  std::size_t dimension() const { return boxes.empty() ? 0 : boxes.front().dimension(); }

  bool contains(std::span<const double> x) const {
    for (const auto& b : boxes)
      if (b.contains(x)) return true;
    return false;
  }

  // Exact for box unions: unions intersect iff some box pair intersects.
  bool intersects(const Region& o) const {
    for (const auto& a : boxes)
      for (const auto& b : o.boxes)
        if (a.intersects(b)) return true;
    return false;
  }

  Region& add(Box b) {
    boxes.push_back(std::move(b));
    return *this;
  }

  Region united(const Region& o) const {
    Region r = *this;
    for (const auto& b : o.boxes) r.boxes.push_back(b);
    return r;
  }

  bool bounded() const {
    for (const auto& b : boxes)
      for (std::size_t d = 0; d < b.dimension(); ++d)
        if (!std::isfinite(b.lo[d]) || !std::isfinite(b.hi[d])) return false;
    return true;
  }
};

// 1-D grid over [lo, hi] with at most `step` spacing; both endpoints included.
// `offset` shrinks the interval from both sides (interior grids).
inline std::vector<double> grid_points(double lo, double hi, double step, double offset = 0.0) {
  lo += offset;
  hi -= offset;
  std::vector<double> pts;
  if (hi < lo) return pts;
  if (step <= 0) throw std::invalid_argument("grid: step must be positive");
  auto n = static_cast<std::size_t>(std::ceil((hi - lo) / step - 1e-12));
  pts.reserve(n + 1);
  for (std::size_t i = 0; i <= n; ++i) pts.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n, 1)));
  if (n == 0) pts = {lo};
  return pts;
}

inline nlohmann::json to_json(const Box& b) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t d = 0; d < b.dimension(); ++d) j.push_back({b.lo[d], b.hi[d]});
  return j;
}

// {"boxes": [[[lo,hi],...], ...]} or {"uniform": [lo,hi]} (dimension bound later).
inline nlohmann::json to_json(const Region& r) {
  nlohmann::json j;
  j["boxes"] = nlohmann::json::array();
  for (const auto& b : r.boxes) j["boxes"].push_back(to_json(b));
  return j;
}

inline Box box_from_json(const nlohmann::json& j) {
  std::vector<double> lo, hi;
  for (const auto& iv : j) {
    if (!iv.is_array() || iv.size() != 2) throw std::invalid_argument("box json: expected [lo,hi] pairs");
    lo.push_back(iv[0].get<double>());
    hi.push_back(iv[1].get<double>());
  }
  return Box(std::move(lo), std::move(hi));
}

// `dim` resolves {"uniform": [lo,hi]} entries; pass 0 to forbid them.
inline Region region_from_json(const nlohmann::json& j, std::size_t dim = 0) {
  Region r;
  if (j.contains("uniform")) {
    if (dim == 0) throw std::invalid_argument("region json: uniform region needs a bound dimension");
    r.add(Box::uniform(j["uniform"][0].get<double>(), j["uniform"][1].get<double>(), dim));
    return r;
  }
  if (!j.contains("boxes")) throw std::invalid_argument("region json: expected 'boxes' or 'uniform'");
  for (const auto& b : j["boxes"]) r.add(box_from_json(b));
  return r;
}

}  // namespace cbf
