#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "patchal/aggregate.hpp"
#include "patchal/rng.hpp"
#include "patchal/uncertainty.hpp"
#include "patchal/volumes.hpp"

namespace patchal {

// ---------------------------------------------------------------------------
// Methods and noise

enum class Method { Random, Random33FG, Random66FG, PE, BALD, PowerPE, PowerBALD, SoftrankBALD };

inline constexpr Method kAllMethods[] = {Method::Random, Method::Random33FG, Method::Random66FG, Method::PE,
                                         Method::BALD,   Method::PowerPE,    Method::PowerBALD,  Method::SoftrankBALD};

inline std::string method_name(Method m)
{
    switch (m) {
    case Method::Random: return "Random";
    case Method::Random33FG: return "Random33FG";
    case Method::Random66FG: return "Random66FG";
    case Method::PE: return "PE";
    case Method::BALD: return "BALD";
    case Method::PowerPE: return "PowerPE";
    case Method::PowerBALD: return "PowerBALD";
    case Method::SoftrankBALD: return "SoftrankBALD";
    }
    return "?";
}

inline Method parse_method(const std::string& name)
{
    for (auto m : kAllMethods)
        if (method_name(m) == name) return m;
    throw Error(ErrorCode::InvalidArgument, "unknown query method " + name);
}

inline bool is_uncertainty_method(Method m) { return m >= Method::PE; }

inline UncertaintyKind uncertainty_of(Method m)
{
    return (m == Method::PE || m == Method::PowerPE) ? UncertaintyKind::PE : UncertaintyKind::BALD;
}

/// Share of foreground-oversampled draws for the random baselines.
inline double foreground_share(Method m)
{
    switch (m) {
    case Method::Random33FG: return 0.33;
    case Method::Random66FG: return 0.66;
    default: return 0.0;
    }
}

enum class NoiseKind { none, power, softrank };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::none;
    double beta = std::numeric_limits<double>::infinity();

    void validate() const
    {
        if (std::isnan(beta) || beta <= 0.0) throw Error(ErrorCode::InvalidArgument, "beta must be > 0 or infinite");
    }
};

inline NoiseSpec default_noise(Method m)
{
    switch (m) {
    case Method::PowerPE:
    case Method::PowerBALD: return {NoiseKind::power, 1.0};
    case Method::SoftrankBALD: return {NoiseKind::softrank, 1.0};
    default: return {NoiseKind::none, std::numeric_limits<double>::infinity()};
    }
}

/// Gumbel(0, 1/beta) sample from a uniform u in (0,1) via the inverse CDF.
inline double gumbel_from_uniform(double u, double beta) noexcept
{
    if (std::isinf(beta)) return 0.0;
    return -std::log(-std::log(u)) / beta;
}

// ---------------------------------------------------------------------------
// Candidates and queries

struct Candidate {
    std::string image_id;
    PatchBox box;
    double score = 0.0;      // ranking score, possibly perturbed
    double raw_score = 0.0;  // aggregated uncertainty before perturbation
};

enum class DrawMode { scored, random, class_centered, border_centered, fallback_random, coverage };

struct Query {
    int loop_index = 0;
    Method method = Method::Random;
    std::uint64_t seed = 0;
    bool scored = false;  // false: candidate scores are meaningless (null in manifests)
    std::vector<Candidate> patches;
    std::vector<DrawMode> modes;
    int no_foreground_fallbacks = 0;
};

namespace detail {

inline bool origin_less(const PatchBox& a, const PatchBox& b) noexcept { return a.origin < b.origin; }

/// Total order used for every ranking: score desc, raw score desc, then
/// (image_id, origin) ascending.
inline bool ranks_before(const Candidate& a, const Candidate& b) noexcept
{
    if (a.score != b.score) return a.score > b.score;
    if (a.raw_score != b.raw_score) return a.raw_score > b.raw_score;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return origin_less(a.box, b.box);
}

inline bool admissible(const PatchBox& box, std::span<const PatchBox> prior, std::span<const PatchBox> kept, double o)
{
    for (const auto& p : prior)
        if (overlap_fraction(box, p) > o) return false;
    for (const auto& k : kept)
        if (overlap_fraction(box, k) > o) return false;
    return true;
}

}  // namespace detail

/// Greedy per-image scan: visit origins by descending score (ties by origin)
/// and keep a box when its overlap with every kept and every labeled box is
/// at most `o`. Stops after `cap` keeps.
inline std::vector<Candidate> select_image_patches(const ScoreField& field, const AnnotationMask& labeled, double o,
                                                   int cap)
{
    if (o < 0.0 || o > 1.0) throw Error(ErrorCode::InvalidArgument, "overlap must be in [0,1]");
    if (cap < 1) throw Error(ErrorCode::InvalidArgument, "cap must be >= 1");
    const auto n = field.values.size();
    if (n == 0) throw Error(ErrorCode::EmptyField, "score field has no origins");

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::int64_t{0});
    const auto& v = field.values;
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        return v[a] != v[b] ? v[a] > v[b] : a < b;
    });

    const auto& prior = labeled.boxes();
    std::vector<PatchBox> kept_boxes;
    std::vector<Candidate> kept;
    for (auto idx : order) {
        const auto box = field.box_at(idx);
        if (!detail::admissible(box, prior, kept_boxes, o)) continue;
        kept_boxes.push_back(box);
        kept.push_back({field.image_id, box, static_cast<double>(v[idx]), static_cast<double>(v[idx])});
        if (static_cast<int>(kept.size()) == cap) break;
    }
    return kept;
}

/// Applies the stochastic-acquisition perturbation. Power: ln(s) + eps;
/// softrank: -ln(rank) + eps; eps ~ Gumbel(0, 1/beta), one draw per
/// candidate in input order.
inline std::vector<Candidate> perturb_scores(std::vector<Candidate> cands, const NoiseSpec& spec, RngStream& rng)
{
    spec.validate();
    if (spec.kind == NoiseKind::none) return cands;

    std::vector<double> base(cands.size());
    if (spec.kind == NoiseKind::power) {
        for (std::size_t i = 0; i < cands.size(); ++i) base[i] = std::log(std::max(cands[i].raw_score, 1e-12));
    } else {
        std::vector<std::size_t> order(cands.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const auto& ca = cands[a];
            const auto& cb = cands[b];
            if (ca.raw_score != cb.raw_score) return ca.raw_score > cb.raw_score;
            if (ca.image_id != cb.image_id) return ca.image_id < cb.image_id;
            return detail::origin_less(ca.box, cb.box);
        });
        for (std::size_t r = 0; r < order.size(); ++r) base[order[r]] = -std::log(static_cast<double>(r + 1));
    }
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const double eps = std::isinf(spec.beta) ? 0.0 : gumbel_from_uniform(rng.uniform_open(), spec.beta);
        cands[i].score = base[i] + eps;
    }
    return cands;
}

/// Pools per-image candidates, perturbs once, and returns the top `n`.
inline Query global_select(const std::vector<std::vector<Candidate>>& per_image, int n, const NoiseSpec& spec,
                           RngStream& rng)
{
    std::vector<Candidate> pool;
    for (const auto& list : per_image) pool.insert(pool.end(), list.begin(), list.end());
    if (n < 0 || pool.size() < static_cast<std::size_t>(n)) {
        throw Error(ErrorCode::InsufficientCandidates,
                    "need " + std::to_string(n) + " patches but only " + std::to_string(pool.size()) + " candidates");
    }
    pool = perturb_scores(std::move(pool), spec, rng);
    std::partial_sort(pool.begin(), pool.begin() + n, pool.end(), detail::ranks_before);
    pool.resize(static_cast<std::size_t>(n));

    Query q;
    q.scored = true;
    q.patches = std::move(pool);
    q.modes.assign(q.patches.size(), DrawMode::scored);
    return q;
}

// ---------------------------------------------------------------------------
// Random baselines

/// One image of the query pool together with its already-annotated boxes.
struct PoolImage {
    std::string id;
    Shape3 shape;
    std::vector<PatchBox> prior;
};

inline std::vector<PoolImage> make_pool(std::span<const AnnotationMask> masks)
{
    std::vector<PoolImage> pool;
    pool.reserve(masks.size());
    for (const auto& m : masks) pool.push_back({m.image_id(), m.shape(), m.boxes()});
    return pool;
}

struct VoxelRef {
    std::uint32_t image = 0;
    std::int64_t linear = 0;
};

/// Per foreground class: all voxels, and border voxels (a 6-neighbour has a
/// different class), pooled over the images of a query pool.
struct ForegroundIndex {
    int num_classes = 0;
    std::vector<std::vector<VoxelRef>> class_voxels;
    std::vector<std::vector<VoxelRef>> border_voxels;

    static ForegroundIndex build(std::span<const LabelVolume> labels)
    {
        ForegroundIndex fi;
        for (const auto& l : labels) fi.num_classes = std::max(fi.num_classes, l.num_classes);
        fi.class_voxels.resize(static_cast<std::size_t>(fi.num_classes));
        fi.border_voxels.resize(static_cast<std::size_t>(fi.num_classes));
        for (std::uint32_t img = 0; img < labels.size(); ++img) {
            const auto& vol = labels[img].labels;
            const auto [d, h, w] = vol.shape().extents();
            for (std::int64_t z = 0; z < d; ++z)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t x = 0; x < w; ++x) {
                        const auto c = vol(z, y, x);
                        if (c == 0 || c == kUnlabeled) continue;
                        const auto lin = vol.shape().linear(z, y, x);
                        fi.class_voxels[c].push_back({img, lin});
                        const bool border = (z > 0 && vol(z - 1, y, x) != c) || (z + 1 < d && vol(z + 1, y, x) != c) ||
                                            (y > 0 && vol(z, y - 1, x) != c) || (y + 1 < h && vol(z, y + 1, x) != c) ||
                                            (x > 0 && vol(z, y, x - 1) != c) || (x + 1 < w && vol(z, y, x + 1) != c);
                        if (border) fi.border_voxels[c].push_back({img, lin});
                    }
        }
        return fi;
    }

    [[nodiscard]] std::vector<int> classes_with(const std::vector<std::vector<VoxelRef>>& lists) const
    {
        std::vector<int> out;
        for (int c = 1; c < num_classes; ++c)
            if (!lists[c].empty()) out.push_back(c);
        return out;
    }
};

namespace detail {

inline PatchBox centered_box(const Index3& center, const Index3& size, const Shape3& shape)
{
    const auto ext = shape.extents();
    PatchBox b{{0, 0, 0}, size};
    for (int k = 0; k < 3; ++k) b.origin[k] = std::clamp(center[k] - size[k] / 2, std::int64_t{0}, ext[k] - size[k]);
    return b;
}

inline PatchBox uniform_box(const Shape3& shape, const Index3& size, RngStream& rng)
{
    const auto ext = shape.extents();
    PatchBox b{{0, 0, 0}, size};
    for (int k = 0; k < 3; ++k) b.origin[k] = rng.between(0, ext[k] - size[k]);
    return b;
}

/// Draws boxes one at a time, rejecting overlap violations, until `n` are
/// accepted or 1000*n attempts are spent.
class RejectionSampler {
public:
    RejectionSampler(std::span<const PoolImage> pool, int n, double o)
        : pool_(pool), n_(n), o_(o), kept_(pool.size()), budget_(1000LL * std::max(n, 1))
    {
        if (pool.empty()) throw Error(ErrorCode::InsufficientCandidates, "empty image pool");
        if (o < 0.0 || o > 1.0) throw Error(ErrorCode::InvalidArgument, "overlap must be in [0,1]");
    }

    /// `draw` returns (image index, box, mode) or nullopt for a wasted attempt.
    template <typename Draw>
    Query run(Draw&& draw)
    {
        Query q;
        while (static_cast<int>(q.patches.size()) < n_) {
            if (attempts_++ >= budget_) {
                throw Error(ErrorCode::InsufficientCandidates,
                            "could not place " + std::to_string(n_) + " patches within " + std::to_string(budget_) +
                                " attempts");
            }
            auto drawn = draw();
            if (!drawn) continue;
            auto [img, box, mode] = *drawn;
            if (!detail::admissible(box, pool_[img].prior, kept_[img], o_)) continue;
            kept_[img].push_back(box);
            q.patches.push_back({pool_[img].id, box, 0.0, 0.0});
            q.modes.push_back(mode);
        }
        return q;
    }

private:
    std::span<const PoolImage> pool_;
    int n_;
    double o_;
    std::vector<std::vector<PatchBox>> kept_;
    long long budget_;
    long long attempts_ = 0;
};

inline std::tuple<std::size_t, PatchBox, DrawMode> random_draw(std::span<const PoolImage> pool, const Index3& patch,
                                                               RngStream& rng, DrawMode mode = DrawMode::random)
{
    const auto img = static_cast<std::size_t>(rng.below(pool.size()));
    const auto size = clamp_patch(patch, pool[img].shape);
    return {img, uniform_box(pool[img].shape, size, rng), mode};
}

inline std::tuple<std::size_t, PatchBox, DrawMode> centered_draw(std::span<const PoolImage> pool, const VoxelRef& v,
                                                                 const Index3& patch, DrawMode mode)
{
    const auto& shape = pool[v.image].shape;
    return {v.image, centered_box(shape.unravel(v.linear), clamp_patch(patch, shape), shape), mode};
}

}  // namespace detail

/// Uniform image, then uniform valid origin; overlap violations are redrawn.
inline Query random_query(std::span<const PoolImage> pool, int n, const Index3& patch_size, double o, RngStream& rng)
{
    detail::RejectionSampler sampler(pool, n, o);
    return sampler.run([&]() -> std::optional<std::tuple<std::size_t, PatchBox, DrawMode>> {
        return detail::random_draw(pool, patch_size, rng);
    });
}

/// Foreground-aware random baseline. With probability 1 - p_fg a patch is
/// fully random; otherwise it is centered on a uniform voxel of a uniformly
/// chosen foreground class (p_fg/2) or on a uniform border voxel of such a
/// class (p_fg/2). With p_fg == 0 the draws coincide with random_query.
inline Query fg_aware_query(std::span<const PoolImage> pool, const ForegroundIndex& fg, int n, const Index3& patch_size,
                            double o, double p_fg, RngStream& rng)
{
    if (p_fg < 0.0 || p_fg > 1.0) throw Error(ErrorCode::InvalidArgument, "p_fg must be in [0,1]");
    const auto fg_classes = fg.classes_with(fg.class_voxels);
    const auto border_classes = fg.classes_with(fg.border_voxels);
    int fallbacks = 0;

    detail::RejectionSampler sampler(pool, n, o);
    auto q = sampler.run([&]() -> std::optional<std::tuple<std::size_t, PatchBox, DrawMode>> {
        if (p_fg <= 0.0) return detail::random_draw(pool, patch_size, rng);
        const double u = rng.uniform();
        if (u >= p_fg) return detail::random_draw(pool, patch_size, rng);
        const bool border = u >= p_fg / 2.0;
        const auto& classes = border ? border_classes : fg_classes;
        if (classes.empty()) {
            ++fallbacks;
            return detail::random_draw(pool, patch_size, rng, DrawMode::fallback_random);
        }
        const int c = classes[rng.below(classes.size())];
        const auto& voxels = border ? fg.border_voxels[c] : fg.class_voxels[c];
        return detail::centered_draw(pool, voxels[rng.below(voxels.size())], patch_size,
                                     border ? DrawMode::border_centered : DrawMode::class_centered);
    });
    q.no_foreground_fallbacks = fallbacks;
    return q;
}

inline bool box_contains_class(const LabelVolume& labels, const PatchBox& box, int cls)
{
    bool found = false;
    const auto e = box.end();
    for (auto z = box.origin[0]; z < e[0] && !found; ++z)
        for (auto y = box.origin[1]; y < e[1] && !found; ++y)
            for (auto x = box.origin[2]; x < e[2]; ++x)
                if (labels.labels(z, y, x) == cls) {
                    found = true;
                    break;
                }
    return found;
}

/// Starting budget: class-centered draws until every foreground class present
/// in the pool appears in at least two selected patches, then the rest with
/// the 33% foreground-aware baseline.
inline Query starting_budget(std::span<const PoolImage> pool, std::span<const LabelVolume> labels,
                             const ForegroundIndex& fg, int budget, const Index3& patch_size, double o, RngStream& rng)
{
    if (labels.size() != pool.size()) throw Error(ErrorCode::InvalidArgument, "labels must align with the pool");
    const auto classes = fg.classes_with(fg.class_voxels);
    if (budget < 2 * static_cast<int>(classes.size())) {
        throw Error(ErrorCode::InsufficientCandidates, "starting budget smaller than two patches per class");
    }

    Query q;
    std::vector<std::vector<PatchBox>> kept(pool.size());
    std::vector<int> coverage(static_cast<std::size_t>(fg.num_classes), 0);
    const long long attempt_budget = 1000LL * budget;

    for (int c : classes) {
        long long attempts = 0;
        while (coverage[c] < 2) {
            if (static_cast<int>(q.patches.size()) >= budget) {
                throw Error(ErrorCode::InsufficientCandidates, "budget exhausted before every class was covered twice");
            }
            if (attempts++ >= attempt_budget) {
                throw Error(ErrorCode::ClassUncoverable,
                            "no non-overlapping patch covers class " + std::to_string(c) + " a second time");
            }
            const auto& voxels = fg.class_voxels[c];
            auto [img, box, mode] =
                detail::centered_draw(pool, voxels[rng.below(voxels.size())], patch_size, DrawMode::coverage);
            if (!detail::admissible(box, pool[img].prior, kept[img], o)) continue;
            kept[img].push_back(box);
            q.patches.push_back({pool[img].id, box, 0.0, 0.0});
            q.modes.push_back(mode);
            for (int other : classes)
                if (box_contains_class(labels[img], box, other)) ++coverage[other];
        }
    }

    const int remaining = budget - static_cast<int>(q.patches.size());
    if (remaining > 0) {
        std::vector<PoolImage> rest(pool.begin(), pool.end());
        for (std::size_t i = 0; i < rest.size(); ++i) rest[i].prior.insert(rest[i].prior.end(), kept[i].begin(), kept[i].end());
        auto fill = fg_aware_query(rest, fg, remaining, patch_size, o, foreground_share(Method::Random33FG), rng);
        q.patches.insert(q.patches.end(), fill.patches.begin(), fill.patches.end());
        q.modes.insert(q.modes.end(), fill.modes.begin(), fill.modes.end());
        q.no_foreground_fallbacks = fill.no_foreground_fallbacks;
    }
    return q;
}

}  // namespace patchal
