#include "ermcal/chain_solver.hpp"

#include <algorithm>

#include "ermcal/errors.hpp"

namespace ermcal {
namespace {

// Derivative slope * h + offset on [lo, hi].
struct Piece {
    double lo, hi, slope, offset;
    double at(double h) const { return slope * h + offset; }
};

// Left-most point where the (nondecreasing) derivative crosses zero, or the
// domain boundary when it never does.
double argmin(const std::vector<Piece>& f) {
    for (const Piece& p : f) {
        const double dl = p.at(p.lo);
        if (dl >= 0.0) return p.lo;
        if (p.at(p.hi) > 0.0) return std::clamp(-p.offset / p.slope, p.lo, p.hi);
    }
    return f.back().hi;
}

// Cost-to-come after minimizing over the previous variable within +-gap:
// the left branch moves left by gap, the right branch moves right, and the
// gap opens a flat region around the minimizer. Result is clipped to the box.
std::vector<Piece> widen(const std::vector<Piece>& f, double m, double gap, double box) {
    std::vector<Piece> out;
    out.reserve(f.size() + 2);
    const auto push = [&](double lo, double hi, double slope, double offset) {
        lo = std::max(lo, -box);
        hi = std::min(hi, box);
        if (hi > lo) out.push_back({lo, hi, slope, offset});
    };
    for (const Piece& p : f) {
        if (p.lo >= m) break;
        const double hi = std::min(p.hi, m);
        push(p.lo - gap, hi - gap, p.slope, p.offset + p.slope * gap);
    }
    push(m - gap, m + gap, 0.0, 0.0);
    for (const Piece& p : f) {
        if (p.hi <= m) continue;
        const double lo = std::max(p.lo, m);
        push(lo + gap, p.hi + gap, p.slope, p.offset - p.slope * gap);
    }
    if (out.empty()) out.push_back({-box, box, 0.0, 0.0});
    return out;
}

}  // namespace

std::vector<double> solve_chain_qp(std::span<const double> quad, std::span<const double> lin,
                                   std::span<const double> gaps, double box) {
    const std::size_t m = quad.size();
    if (m == 0 || lin.size() != m || gaps.size() + 1 != m)
        throw InputError("solve_chain_qp: inconsistent problem sizes");
    if (!(box > 0.0)) throw InputError("solve_chain_qp: box must be positive");

    std::vector<double> minimizers(m);
    std::vector<Piece> f{{-box, box, 0.0, 0.0}};
    for (std::size_t j = 0; j < m; ++j) {
        if (j > 0) f = widen(f, minimizers[j - 1], std::max(gaps[j - 1], 0.0), box);
        for (Piece& p : f) {
            p.slope += 2.0 * quad[j];
            p.offset += lin[j];
        }
        minimizers[j] = argmin(f);
    }

    std::vector<double> h(m);
    h[m - 1] = minimizers[m - 1];
    for (std::size_t j = m - 1; j-- > 0;) {
        const double g = std::max(gaps[j], 0.0);
        h[j] = std::clamp(minimizers[j], h[j + 1] - g, h[j + 1] + g);
    }
    return h;
}

}  // namespace ermcal
