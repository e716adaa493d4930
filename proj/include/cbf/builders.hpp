#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "cbf/system.hpp"

namespace cbf {

struct RoomParams {
  double alpha = 5e-2;     // neighbor heat exchange
  double alpha_e = 8e-3;   // ambient heat exchange
  double alpha_h = 3.6e-3; // heater heat exchange
  double T_ext = 15.0;
  double T_heater = 55.0;
  double temp_lo = 0.0;    // compact state set bounds
  double temp_hi = 45.0;
};

struct BuiltNetwork {
  InterconnectedSystem system;
  LabelingFunction labeling;
};

// Ring of temperature-controlled rooms:
//   T_i' = (1 - 2a - ae - ah u_i) T_i + a (T_{i-1} + T_{i+1}) + ae T_ext + ah T_heater u_i
// with four regions of interest: comfort band, cold band, hot band, remainder.
inline BuiltNetwork build_room_network(std::size_t n, const RoomParams& p = {}) {
  if (n < 3) throw std::invalid_argument("room network needs at least 3 rooms");

  Subsystem proto;
  proto.state_dim = 1;
  proto.input_dim = 1;
  proto.internal_dim = 2;
  proto.input = Box::interval(0.0, 1.0);
  proto.state_region = Region(Box::interval(p.temp_lo, p.temp_hi));
  proto.internal_region = Region(Box::uniform(p.temp_lo, p.temp_hi, 2));
  proto.transition = [p](std::span<const double> x, std::span<const double> u, std::span<const double> w,
                         std::span<double> out) {
    double a = 1.0 - 2.0 * p.alpha - p.alpha_e - p.alpha_h * u[0];
    out[0] = a * x[0] + p.alpha * (w[0] + w[1]) + p.alpha_e * p.T_ext + p.alpha_h * p.T_heater * u[0];
  };

  auto feeders = [n](std::size_t i) {
    return std::vector<std::size_t>{(i + n - 1) % n, (i + 1) % n};
  };
  auto sys = InterconnectedSystem::homogeneous(std::move(proto), n, feeders);
  sys.set_bulk_step([n, p](std::span<const double> x, std::span<const double> u, std::span<double> out) {
    for (std::size_t i = 0; i < n; ++i) {
      double left = x[(i + n - 1) % n], right = x[(i + 1) % n];
      double a = 1.0 - 2.0 * p.alpha - p.alpha_e - p.alpha_h * u[i];
      out[i] = a * x[i] + p.alpha * (left + right) + p.alpha_e * p.T_ext + p.alpha_h * p.T_heater * u[i];
    }
  });
  sys.validate_wiring();

  std::vector<LabelingFunction::Entry> entries;
  entries.push_back({"p0", Region(Box::uniform(20.5, 22.5, n)), false});
  entries.push_back({"p1", Region(Box::uniform(p.temp_lo, 20.0, n)), false});
  entries.push_back({"p2", Region(Box::uniform(23.0, p.temp_hi, n)), false});
  entries.push_back({"p3", Region(), true});
  LabelingFunction lab(Box::uniform(p.temp_lo, p.temp_hi, n), std::move(entries));

  return {std::move(sys), std::move(lab)};
}

struct KuramotoParams {
  double tau = 0.2;       // sampling time
  double coupling = 1.0;  // K
  double omega = 1.0;     // natural frequency (identical oscillators)
  double u_lo = -0.6;
  double u_hi = 0.6;
  double u_step = 0.1;
};

// Fully connected controlled Kuramoto network:
//   th_i' = th_i + tau*Omega + (tau*K/N) sum_j sin(th_j - th_i) + u_i
// Phases wrap into [0, 2pi) after every synchronous step; seven phase bands
// label the state space.
inline BuiltNetwork build_kuramoto_network(std::size_t n, const KuramotoParams& p = {}) {
  if (n < 2) throw std::invalid_argument("kuramoto network needs at least 2 oscillators");
  const double two_pi = 2.0 * std::numbers::pi;

  std::vector<double> inputs;
  for (double v = p.u_lo; v <= p.u_hi + 1e-9; v += p.u_step) inputs.push_back(std::round(v * 1e9) / 1e9);

  Subsystem proto;
  proto.state_dim = 1;
  proto.input_dim = 1;
  proto.internal_dim = n - 1;
  FiniteInputSet fs;
  for (double v : inputs) fs.points.push_back({v});
  proto.input = std::move(fs);
  proto.state_region = Region(Box::interval(0.0, two_pi));
  proto.internal_region = Region(Box::uniform(0.0, two_pi, n - 1));
  double gain = p.tau * p.coupling / static_cast<double>(n);
  proto.transition = [p, gain](std::span<const double> x, std::span<const double> u, std::span<const double> w,
                               std::span<double> out) {
    double c = 0.0;
    if (!w.empty()) {
      bool uniform = true;
      for (std::size_t j = 1; j < w.size(); ++j)
        if (w[j] != w[0]) {
          uniform = false;
          break;
        }
      if (uniform)  // determinization references are constant vectors; skip the sin loop
        c = static_cast<double>(w.size()) * std::sin(w[0] - x[0]);
      else
        for (double wj : w) c += std::sin(wj - x[0]);
    }
    out[0] = x[0] + p.tau * p.omega + gain * c + u[0];
  };

  auto feeders = [n](std::size_t i) {
    std::vector<std::size_t> f;
    f.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) f.push_back(j);
    return f;
  };
  auto sys = InterconnectedSystem::homogeneous(std::move(proto), n, feeders);
  // sum_j sin(th_j - th_i) = sin-sum * cos(th_i) - cos-sum * sin(th_i)
  sys.set_bulk_step([n, p, gain](std::span<const double> x, std::span<const double> u, std::span<double> out) {
    double S = 0.0, C = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      S += std::sin(x[j]);
      C += std::cos(x[j]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double c = S * std::cos(x[i]) - C * std::sin(x[i]);
      out[i] = x[i] + p.tau * p.omega + gain * c + u[i];
    }
  });
  sys.set_post_step([two_pi](std::span<double> x) {
    for (double& v : x) {
      v = std::fmod(v, two_pi);
      if (v < 0) v += two_pi;
    }
  });
  sys.validate_wiring();

  const double pi = std::numbers::pi;
  std::vector<LabelingFunction::Entry> entries;
  entries.push_back({"p0", Region(Box::uniform(0.0, pi / 3.0, n)), false});
  entries.push_back({"p1", Region(Box::uniform(5.0 * pi / 12.0, 7.0 * pi / 12.0, n)), false});
  entries.push_back({"p2", Region(Box::uniform(2.0 * pi / 3.0, pi, n)), false});
  entries.push_back({"p3", Region(Box::uniform(pi, 4.0 * pi / 3.0, n)), false});
  entries.push_back({"p4", Region(Box::uniform(17.0 * pi / 12.0, 19.0 * pi / 12.0, n)), false});
  entries.push_back({"p5", Region(Box::uniform(5.0 * pi / 3.0, two_pi, n)), false});
  entries.push_back({"p6", Region(), true});
  LabelingFunction lab(Box::uniform(0.0, two_pi, n), std::move(entries));

  return {std::move(sys), std::move(lab)};
}

}  // namespace cbf
