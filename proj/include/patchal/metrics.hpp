#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/tools/minima.hpp>

#include "patchal/volumes.hpp"

namespace patchal {

inline double mean_of(std::span<const double> xs)
{
    if (xs.empty()) return 0.0;
    // Offsets from the first value keep constant inputs exact.
    double offset = 0.0;
    for (double x : xs) offset += x - xs.front();
    return xs.front() + offset / static_cast<double>(xs.size());
}

/// Sample standard deviation (n - 1); 0 for fewer than two values.
inline double stddev_of(std::span<const double> xs)
{
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// ---------------------------------------------------------------------------
// Dice

/// Mean foreground Dice. Classes absent from both volumes are skipped,
/// classes present in only one score 0; 1.0 when no class is included.
inline double dice_per_image(const LabelVolume& pred, const LabelVolume& gt, int num_classes)
{
    if (!(pred.shape() == gt.shape())) throw Error(ErrorCode::ShapeMismatch, "prediction and ground truth differ in shape");
    const auto n = static_cast<std::size_t>(std::max(num_classes, 2));
    std::vector<std::int64_t> p(n, 0), g(n, 0), both(n, 0);
    const auto pv = pred.labels.values();
    const auto gv = gt.labels.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (pv[i] == kUnlabeled || gv[i] == kUnlabeled) throw Error(ErrorCode::InvalidArgument, "sentinel in Dice input");
        if (pv[i] >= n || gv[i] >= n) throw Error(ErrorCode::InvalidArgument, "class id out of range");
        ++p[pv[i]];
        ++g[gv[i]];
        if (pv[i] == gv[i]) ++both[pv[i]];
    }
    double sum = 0.0;
    int included = 0;
    for (std::size_t c = 1; c < n; ++c) {
        const auto denom = p[c] + g[c];
        if (denom == 0) continue;
        sum += 2.0 * static_cast<double>(both[c]) / static_cast<double>(denom);
        ++included;
    }
    return included == 0 ? 1.0 : sum / included;
}

// ---------------------------------------------------------------------------
// Area under the budget curve

struct BudgetPoint {
    double budget = 0.0;
    double value = 0.0;
};

/// Trapezoid area divided by the budget span, so a constant curve returns
/// its own value.
inline double aubc(std::span<const BudgetPoint> curve)
{
    if (curve.size() < 2) throw Error(ErrorCode::DegenerateCurve, "need at least two budget points");
    // Integrate offsets from the first value so a constant curve is exact.
    const double base = curve.front().value;
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        const double width = curve[i].budget - curve[i - 1].budget;
        if (!(width > 0.0)) throw Error(ErrorCode::DegenerateCurve, "budgets must be strictly increasing");
        area += 0.5 * width * ((curve[i].value - base) + (curve[i - 1].value - base));
    }
    return base + area / (curve.back().budget - curve.front().budget);
}

// ---------------------------------------------------------------------------
// Foreground efficiency

struct FgEffPoint {
    double t = 0.0;  // fraction of ground-truth foreground annotated
    double y = 0.0;  // mean Dice
};

struct FgEffInput {
    std::vector<FgEffPoint> points;
    double t0_hat = 0.0;
    double y0_hat = 0.0;
    double yfull_hat = 1.0;
};

/// y(t) = (y0 - yfull) exp(-gamma (t - t0)) + yfull
inline double fg_eff_curve(const FgEffInput& in, double gamma, double t)
{
    return (in.y0_hat - in.yfull_hat) * std::exp(-gamma * (t - in.t0_hat)) + in.yfull_hat;
}

inline double fg_eff_residual(const FgEffInput& in, double gamma)
{
    double ss = 0.0;
    for (const auto& p : in.points) {
        const double r = p.y - fg_eff_curve(in, gamma, p.t);
        ss += r * r;
    }
    return std::isnan(ss) ? std::numeric_limits<double>::infinity() : ss;
}

inline constexpr double kFgEffGammaBound = 1e4;

/// Least-squares decay rate over [-1e4, 1e4]: a log-spaced symmetric grid
/// locates the basin, Brent's method refines inside the neighbouring grid
/// points. Negative rates are legal.
inline double fit_fg_eff(const FgEffInput& in)
{
    if (in.points.empty()) throw Error(ErrorCode::DegenerateFit, "no points to fit");
    if (in.yfull_hat == in.y0_hat) throw Error(ErrorCode::DegenerateFit, "full-data and starting performance coincide");
    const bool informative = std::any_of(in.points.begin(), in.points.end(), [&](const FgEffPoint& p) { return p.t != in.t0_hat; });
    if (!informative) return 0.0;

    std::vector<double> grid{0.0};
    for (int e = -60; e <= 80; ++e) {
        const double g = std::pow(10.0, e / 20.0);
        grid.push_back(g);
        grid.push_back(-g);
    }
    std::sort(grid.begin(), grid.end());

    std::size_t best = 0;
    double best_r = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double r = fg_eff_residual(in, grid[i]);
        if (r < best_r || (r == best_r && std::abs(grid[i]) < std::abs(grid[best]))) {
            best_r = r;
            best = i;
        }
    }
    const double lo = grid[best == 0 ? 0 : best - 1];
    const double hi = grid[std::min(best + 1, grid.size() - 1)];
    std::uintmax_t max_iter = 500;
    const auto [gamma, r] = boost::math::tools::brent_find_minima(
        [&](double g) { return fg_eff_residual(in, g); }, lo, hi, std::numeric_limits<double>::digits, max_iter);
    return r <= best_r ? gamma : grid[best];
}

// ---------------------------------------------------------------------------
// Welch t-test

/// Two-sided p-value of Welch's unequal-variance t-test.
inline double welch_t_test(std::span<const double> a, std::span<const double> b)
{
    if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::TooFewSamples, "Welch test needs >= 2 samples per group");
    const double ma = mean_of(a), mb = mean_of(b);
    const double va = std::pow(stddev_of(a), 2.0), vb = std::pow(stddev_of(b), 2.0);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ra = va / na, rb = vb / nb;
    if (ra + rb == 0.0) return ma == mb ? 1.0 : 0.0;
    const double t = (ma - mb) / std::sqrt(ra + rb);
    const double dof = (ra + rb) * (ra + rb) / (ra * ra / (na - 1.0) + rb * rb / (nb - 1.0));
    const boost::math::students_t_distribution<double> dist(dof);
    return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

// ---------------------------------------------------------------------------
// Pairwise penalty matrix

/// One comparison setting (dataset, label regime, budget) with per-method
/// samples (one value per seed).
struct PpmCell {
    std::string label;
    std::map<std::string, std::vector<double>> samples;
};

struct PpmResult {
    std::vector<std::string> methods;
    std::vector<std::vector<double>> matrix;  // share of cells where row beats column
    std::vector<std::vector<int>> wins;       // raw counts behind `matrix`
    int cells = 0;

    [[nodiscard]] int losses(std::size_t i, std::size_t j) const { return wins[j][i]; }
};

inline PpmResult ppm(std::span<const PpmCell> cells, double alpha = 0.05)
{
    if (cells.empty()) throw Error(ErrorCode::RaggedResults, "no cells to compare");
    PpmResult res;
    for (const auto& [m, _] : cells.front().samples) res.methods.push_back(m);
    const auto k = res.methods.size();
    res.matrix.assign(k, std::vector<double>(k, 0.0));
    res.wins.assign(k, std::vector<int>(k, 0));
    res.cells = static_cast<int>(cells.size());

    for (const auto& cell : cells) {
        if (cell.samples.size() != k) throw Error(ErrorCode::RaggedResults, "cell " + cell.label + " has a different method set");
        std::vector<const std::vector<double>*> s;
        for (const auto& m : res.methods) {
            auto it = cell.samples.find(m);
            if (it == cell.samples.end()) throw Error(ErrorCode::RaggedResults, "cell " + cell.label + " lacks " + m);
            if (it->second.size() < 2) throw Error(ErrorCode::RaggedResults, "cell " + cell.label + " has < 2 seeds for " + m);
            s.push_back(&it->second);
        }
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j) {
                const double p = welch_t_test(*s[i], *s[j]);
                if (!(p < alpha)) continue;
                const double mi = mean_of(*s[i]), mj = mean_of(*s[j]);
                if (mi > mj) ++res.wins[i][j];
                else if (mj > mi) ++res.wins[j][i];
            }
    }
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) res.matrix[i][j] = static_cast<double>(res.wins[i][j]) / res.cells;
    return res;
}

// ---------------------------------------------------------------------------
// Kendall's tau

struct KendallResult {
    double tau = 0.0;
    double p_value = 1.0;
};

namespace detail {

inline long long kendall_score(std::span<const int> a, std::span<const int> b)
{
    long long s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const long long da = a[i] < a[j] ? 1 : (a[i] > a[j] ? -1 : 0);
            const long long db = b[i] < b[j] ? 1 : (b[i] > b[j] ? -1 : 0);
            s += da * db;
        }
    return s;
}

inline bool is_permutation_of_ranks(std::span<const int> r)
{
    std::vector<int> sorted(r.begin(), r.end());
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
}

/// Score distribution over all n! permutations, computed once per n <= 8.
inline const std::map<long long, long long>& kendall_null(int n)
{
    static const auto table = [] {
        std::array<std::map<long long, long long>, 9> t;
        for (int m = 2; m <= 8; ++m) {
            std::vector<int> perm(static_cast<std::size_t>(m));
            std::iota(perm.begin(), perm.end(), 0);
            const std::vector<int> identity = perm;
            do {
                ++t[m][kendall_score(identity, perm)];
            } while (std::next_permutation(perm.begin(), perm.end()));
        }
        return t;
    }();
    return table[static_cast<std::size_t>(n)];
}

}  // namespace detail

/// Tau-a between two tie-free rankings of the same items (rank_a[i] and
/// rank_b[i] belong to item i). The two-sided p-value is exact for n <= 8
/// and uses the normal approximation of the score above that.
inline KendallResult kendall_tau(std::span<const int> rank_a, std::span<const int> rank_b)
{
    if (rank_a.size() != rank_b.size() || rank_a.size() < 2) {
        throw Error(ErrorCode::MismatchedItems, "rankings must cover the same >= 2 items");
    }
    if (!detail::is_permutation_of_ranks(rank_a) || !detail::is_permutation_of_ranks(rank_b)) {
        throw Error(ErrorCode::MismatchedItems, "rankings must not contain ties");
    }
    const auto n = static_cast<long long>(rank_a.size());
    const long long pairs = n * (n - 1) / 2;
    const long long s = detail::kendall_score(rank_a, rank_b);
    KendallResult res{static_cast<double>(s) / static_cast<double>(pairs), 1.0};

    if (n <= 8) {
        const auto& null = detail::kendall_null(static_cast<int>(n));
        long long extreme = 0, total = 0;
        for (const auto& [score, count] : null) {
            total += count;
            if (std::llabs(score) >= std::llabs(s)) extreme += count;
        }
        res.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    } else {
        const double var = static_cast<double>(n * (n - 1) * (2 * n + 5)) / 18.0;
        const double z = static_cast<double>(s) / std::sqrt(var);
        res.p_value = std::erfc(std::abs(z) / std::sqrt(2.0));
    }
    return res;
}

/// Kendall's tau between two orderings (best first) of the same item names.
inline KendallResult kendall_tau(const std::vector<std::string>& order_a, const std::vector<std::string>& order_b)
{
    if (order_a.size() != order_b.size()) throw Error(ErrorCode::MismatchedItems, "orderings differ in length");
    std::vector<int> ra(order_a.size()), rb(order_a.size());
    for (std::size_t i = 0; i < order_a.size(); ++i) {
        ra[i] = static_cast<int>(i);
        auto it = std::find(order_b.begin(), order_b.end(), order_a[i]);
        if (it == order_b.end()) throw Error(ErrorCode::MismatchedItems, order_a[i] + " missing from second ordering");
        rb[i] = static_cast<int>(it - order_b.begin());
    }
    return kendall_tau(std::span<const int>(ra), std::span<const int>(rb));
}

}  // namespace patchal
