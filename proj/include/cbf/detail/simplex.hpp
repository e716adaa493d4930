#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace cbf::detail {

// Dense two-phase tableau simplex for  min c^T x  s.t.  A x <= b,  x >= 0.
// Bland's rule; small problems only (the synthesis learner has a handful of
// variables and a few hundred rows).
struct LpResult {
  bool feasible = false;
  std::vector<double> x;
  double value = 0.0;
};

class Simplex {
 public:
  static LpResult minimize(const std::vector<double>& c, const std::vector<std::vector<double>>& A,
                           const std::vector<double>& b) {
    const std::size_t m = A.size(), n = c.size();
    // Columns: n structural + m slacks + up to m artificials + rhs.
    std::size_t art = 0;
    for (double v : b)
      if (v < 0) ++art;
    const std::size_t cols = n + m + art;
    std::vector<std::vector<double>> T(m, std::vector<double>(cols + 1, 0.0));
    std::vector<std::size_t> basis(m);
    std::size_t art_next = n + m;
    std::vector<bool> is_art(cols, false);

    for (std::size_t i = 0; i < m; ++i) {
      double sign = b[i] < 0 ? -1.0 : 1.0;
      for (std::size_t j = 0; j < n; ++j) T[i][j] = sign * A[i][j];
      T[i][n + i] = sign;  // slack
      T[i][cols] = sign * b[i];
      if (b[i] < 0) {
        T[i][art_next] = 1.0;
        is_art[art_next] = true;
        basis[i] = art_next++;
      } else {
        basis[i] = n + i;
      }
    }

    if (art > 0) {
      // Phase 1: minimize the sum of artificials.
      std::vector<double> obj(cols, 0.0);
      for (std::size_t j = n + m; j < cols; ++j) obj[j] = 1.0;
      double val = run(T, basis, obj, cols);
      if (val > 1e-7) return {};  // infeasible
      // Pivot remaining artificials out of the basis where possible.
      for (std::size_t i = 0; i < m; ++i) {
        if (!is_art[basis[i]]) continue;
        std::size_t enter = cols;
        for (std::size_t j = 0; j < n + m; ++j)
          if (std::abs(T[i][j]) > 1e-9) {
            enter = j;
            break;
          }
        if (enter < cols) pivot(T, basis, i, enter, cols);
      }
    }

    std::vector<double> obj(cols, 0.0);
    for (std::size_t j = 0; j < n; ++j) obj[j] = c[j];
    for (std::size_t j = n + m; j < cols; ++j) obj[j] = 1e9;  // keep artificials out
    double val = run(T, basis, obj, cols);

    LpResult r;
    r.feasible = true;
    r.x.assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      if (basis[i] < n) r.x[basis[i]] = T[i][cols];
    r.value = val;
    return r;
  }

 private:
  static void pivot(std::vector<std::vector<double>>& T, std::vector<std::size_t>& basis, std::size_t row,
                    std::size_t col, std::size_t cols) {
    const std::size_t m = T.size();
    double piv = T[row][col];
    for (std::size_t j = 0; j <= cols; ++j) T[row][j] /= piv;
    for (std::size_t i = 0; i < m; ++i) {
      if (i == row || std::abs(T[i][col]) < 1e-12) continue;
      double f = T[i][col];
      for (std::size_t j = 0; j <= cols; ++j) T[i][j] -= f * T[row][j];
    }
    basis[row] = col;
  }

  // Returns the final objective value.
  static double run(std::vector<std::vector<double>>& T, std::vector<std::size_t>& basis,
                    const std::vector<double>& obj, std::size_t cols) {
    const std::size_t m = T.size();
    for (std::size_t iter = 0; iter < 200000; ++iter) {
      // Reduced costs: r_j = obj_j - obj_B^T B^-1 A_j.
      std::size_t enter = cols;
      for (std::size_t j = 0; j < cols; ++j) {
        double red = obj[j];
        for (std::size_t i = 0; i < m; ++i) red -= obj[basis[i]] * T[i][j];
        if (red < -1e-9) {  // Bland: first improving column
          enter = j;
          break;
        }
      }
      if (enter == cols) break;
      std::size_t leave = m;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m; ++i) {
        if (T[i][enter] > 1e-9) {
          double ratio = T[i][cols] / T[i][enter];
          if (ratio < best - 1e-12 || (std::abs(ratio - best) <= 1e-12 && (leave == m || basis[i] < basis[leave]))) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave == m) break;  // unbounded; caller bounds every variable
      pivot(T, basis, leave, enter, cols);
    }
    double val = 0.0;
    for (std::size_t i = 0; i < m; ++i) val += obj[basis[i]] * T[i][cols];
    return val;
  }
};

}  // namespace cbf::detail
