#pragma once

#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbf/region.hpp"

namespace cbf {

// Measurable labeling L: X -> Pi as a priority-ordered list of
// (proposition, region) pairs. The first matching entry wins; an entry may
// be declared as the "else" branch (remainder of X) instead of carrying
// geometry. The reserved proposition "true" always resolves to X.
class LabelingFunction {
 public:
  static constexpr const char* kTrueProp = "true";

  struct Entry {
    std::string prop;
    Region region;     // ignored when is_else
    bool is_else = false;
  };

  LabelingFunction() = default;
  LabelingFunction(Box state_box, std::vector<Entry> entries)
      : state_box_(std::move(state_box)), entries_(std::move(entries)) {
    int elses = 0;
    for (const auto& e : entries_) elses += e.is_else ? 1 : 0;
    if (elses > 1) throw std::invalid_argument("labeling: at most one else entry");
  }

  const Box& state_box() const { return state_box_; }
  const std::vector<Entry>& entries() const { return entries_; }

  const std::string& label(std::span<const double> x) const {
    for (const auto& e : entries_) {
      if (e.is_else) return e.prop;
      if (e.region.contains(x)) return e.prop;
    }
    throw std::runtime_error("labeling: state received no proposition (regions do not cover X)");
  }

  bool has_prop(const std::string& p) const {
    if (p == kTrueProp) return true;
    for (const auto& e : entries_)
      if (e.prop == p) return true;
    return false;
  }

  bool is_else_prop(const std::string& p) const {
    for (const auto& e : entries_)
      if (e.prop == p) return e.is_else;
    return false;
  }

  // Explicit geometry of L^-1(p); nullopt for the else branch.
  std::optional<Region> region_of(const std::string& p) const {
    if (p == kTrueProp) return Region(state_box_);
    for (const auto& e : entries_) {
      if (e.prop != p) continue;
      if (e.is_else) return std::nullopt;
      return e.region;
    }
    throw std::invalid_argument("labeling: no region bound to proposition '" + p + "'");
  }

  // A point of X outside every explicit region, if one can be exhibited.
  std::optional<std::vector<double>> remainder_witness(std::size_t probes = 4096, unsigned seed = 1) const {
    std::size_t dim = state_box_.dimension();
    auto uncovered = [&](const std::vector<double>& x) {
      for (const auto& e : entries_)
        if (!e.is_else && e.region.contains(x)) return false;
      return true;
    };
    // Candidate coordinates: box corners, centers, and points just outside
    // every region boundary, combined uniformly across dimensions.
    std::vector<double> cand;
    for (const auto& e : entries_)
      if (!e.is_else)
        for (const auto& b : e.region.boxes)
          for (std::size_t d = 0; d < b.dimension(); ++d) {
            double w = std::max(1e-6, 1e-3 * (state_box_.hi[d] - state_box_.lo[d]));
            cand.push_back(b.lo[d] - w);
            cand.push_back(b.hi[d] + w);
          }
    for (std::size_t d = 0; d < dim; ++d) {
      cand.push_back(state_box_.lo[d]);
      cand.push_back(state_box_.hi[d]);
      cand.push_back(0.5 * (state_box_.lo[d] + state_box_.hi[d]));
    }
    std::vector<double> x(dim);
    for (double c : cand) {
      bool in = true;
      for (std::size_t d = 0; d < dim; ++d) {
        x[d] = std::min(std::max(c, state_box_.lo[d]), state_box_.hi[d]);
        in = in && x[d] >= state_box_.lo[d] && x[d] <= state_box_.hi[d];
      }
      if (in && uncovered(x)) return x;
    }
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < probes; ++k) {
      for (std::size_t d = 0; d < dim; ++d) {
        std::uniform_real_distribution<double> u(state_box_.lo[d], state_box_.hi[d]);
        x[d] = u(rng);
      }
      if (uncovered(x)) return x;
    }
    return std::nullopt;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["state_box"] = cbf::to_json(state_box_);
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries_) {
      nlohmann::json je;
      je["prop"] = e.prop;
      if (e.is_else)
        je["else"] = true;
      else
        je["region"] = cbf::to_json(e.region);
      j["entries"].push_back(je);
    }
    return j;
  }

  static LabelingFunction from_json(const nlohmann::json& j) {
    Box x = box_from_json(j.at("state_box"));
    std::vector<Entry> es;
    for (const auto& je : j.at("entries")) {
      Entry e;
      e.prop = je.at("prop").get<std::string>();
      e.is_else = je.value("else", false);
      if (!e.is_else) e.region = region_from_json(je.at("region"), x.dimension());
      es.push_back(std::move(e));
    }
    return LabelingFunction(std::move(x), std::move(es));
  }

 private:
  Box state_box_;
  std::vector<Entry> entries_;
};

}  // namespace cbf
