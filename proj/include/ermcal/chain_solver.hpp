#pragma once

#include <span>
#include <vector>

namespace ermcal {

// Exact minimizer of a separable convex quadratic over a box-bounded chain:
//
//   minimize   sum_j quad[j] * h_j^2 + lin[j] * h_j
//   subject to |h_j| <= box,  |h_{j+1} - h_j| <= gaps[j]
//
// with quad[j] >= 0 and gaps.size() == quad.size() - 1. Solved by a forward
// pass that keeps the cost-to-come as a piecewise-linear derivative (a convex
// piecewise-quadratic function), followed by a backward clamping pass.
// Cost is O(m * segments), at most O(m^2).
std::vector<double> solve_chain_qp(std::span<const double> quad, std::span<const double> lin,
                                   std::span<const double> gaps, double box);

}  // namespace ermcal
