#pragma once

#include <utility>
#include <vector>

namespace kfmot {

/// Minimum-cost assignment on a square matrix (Jonker-Volgenant style
/// shortest augmenting paths, O(n^3)). Returns row -> column.
std::vector<int> solve_assignment_square(
    const std::vector<std::vector<double>>& cost);

/// One-to-one matching maximizing total similarity over pairs with
/// sim >= min_sim. Rows/columns may stay unmatched; rectangular input is
/// fine. Returns (row, col) pairs sorted by row.
std::vector<std::pair<int, int>> max_similarity_matching(
    const std::vector<std::vector<double>>& sim, double min_sim);

}  // namespace kfmot
