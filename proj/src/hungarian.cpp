#include "kfmot/hungarian.hpp"

#include <algorithm>
#include <limits>

namespace kfmot {

std::vector<int> solve_assignment_square(
    const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();

  // 1-based potentials; p[j] = row assigned to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> rowsol(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j]) rowsol[p[j] - 1] = j - 1;
  }
  return rowsol;
}

std::vector<std::pair<int, int>> max_similarity_matching(
    const std::vector<std::vector<double>>& sim, double min_sim) {
  const int rows = static_cast<int>(sim.size());
  const int cols = rows == 0 ? 0 : static_cast<int>(sim[0].size());
  if (rows == 0 || cols == 0) return {};

  // Pad to (rows+cols) square: a row matched to a dummy column is simply
  // unmatched. Dummy cost M exceeds every viable cost M - s (s > 0), so a
  // viable pair always beats leaving both sides unmatched, and minimizing
  // total cost maximizes the similarity sum.
  double max_sim = 1.0;
  for (const auto& row : sim) {
    for (double s : row) max_sim = std::max(max_sim, s);
  }
  const int n = rows + cols;
  const double forbidden = (max_sim + 1.0) * (n + 2);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      cost[r][c] = sim[r][c] >= min_sim ? max_sim - sim[r][c] : forbidden;
    }
    for (int c = cols; c < n; ++c) cost[r][c] = max_sim;
  }
  // Dummy rows absorb unmatched real columns at zero cost (already 0).

  const std::vector<int> rowsol = solve_assignment_square(cost);
  std::vector<std::pair<int, int>> out;
  for (int r = 0; r < rows; ++r) {
    const int c = rowsol[r];
    if (c >= 0 && c < cols && sim[r][c] >= min_sim) out.emplace_back(r, c);
  }
  return out;
}

}  // namespace kfmot
