#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "patchal/volumes.hpp"

namespace patchal {

enum class UncertaintyKind { PE, EE, BALD };

struct UncertaintyMap {
    std::string image_id;
    FloatVolume values;
    UncertaintyKind kind = UncertaintyKind::PE;
};

namespace detail {

inline constexpr double kProbabilityFloor = 1e-12;

/// -p ln p with 0 ln 0 = 0 and p floored before the log.
inline double entropy_term(double p) noexcept
{
    return p > 0.0 ? -p * std::log(std::max(p, kProbabilityFloor)) : 0.0;
}

/// Sum that does not depend on the order of `values` (sorted first), so that
/// permuting ensemble members gives bit-identical maps.
inline double order_free_sum(std::span<double> values) noexcept
{
    std::sort(values.begin(), values.end());
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

struct VoxelEntropies {
    double predictive = 0.0;
    double expected = 0.0;
};

inline VoxelEntropies voxel_entropies(const EnsembleProbabilityStack& stack, std::int64_t voxel,
                                      std::vector<double>& scratch)
{
    const int members = stack.members();
    const int classes = stack.classes();
    scratch.resize(static_cast<std::size_t>(members));

    VoxelEntropies out;
    for (int c = 0; c < classes; ++c) {
        for (int m = 0; m < members; ++m) scratch[m] = stack.at(m, c, voxel);
        const double mean = order_free_sum(scratch) / members;
        out.predictive += entropy_term(mean);
    }
    for (int m = 0; m < members; ++m) {
        double h = 0.0;
        for (int c = 0; c < classes; ++c) h += entropy_term(stack.at(m, c, voxel));
        scratch[m] = h;
    }
    out.expected = order_free_sum(scratch) / members;
    return out;
}

inline void require_members(const EnsembleProbabilityStack& stack)
{
    if (stack.members() < 1) throw Error(ErrorCode::DegenerateStack, "ensemble has no members");
}

template <typename F>
UncertaintyMap map_voxels(const EnsembleProbabilityStack& stack, UncertaintyKind kind, std::string image_id, F&& f)
{
    require_members(stack);
    UncertaintyMap out{std::move(image_id), FloatVolume(stack.shape()), kind};
    std::vector<double> scratch;
    for (std::int64_t v = 0; v < stack.voxels(); ++v) {
        out.values[v] = static_cast<float>(f(voxel_entropies(stack, v, scratch)));
    }
    return out;
}

}  // namespace detail

/// Entropy of the member-mean distribution (natural log).
inline UncertaintyMap predictive_entropy(const EnsembleProbabilityStack& stack, std::string image_id = {})
{
    return detail::map_voxels(stack, UncertaintyKind::PE, std::move(image_id),
                              [](const detail::VoxelEntropies& e) { return e.predictive; });
}

/// Mean of the per-member entropies.
inline UncertaintyMap expected_entropy(const EnsembleProbabilityStack& stack, std::string image_id = {})
{
    return detail::map_voxels(stack, UncertaintyKind::EE, std::move(image_id),
                              [](const detail::VoxelEntropies& e) { return e.expected; });
}

/// Mutual information PE - EE, clamped at zero.
inline UncertaintyMap bald(const EnsembleProbabilityStack& stack, std::string image_id = {})
{
    return detail::map_voxels(stack, UncertaintyKind::BALD, std::move(image_id),
                              [](const detail::VoxelEntropies& e) { return std::max(0.0, e.predictive - e.expected); });
}

inline UncertaintyMap compute_uncertainty(UncertaintyKind kind, const EnsembleProbabilityStack& stack,
                                          std::string image_id = {})
{
    switch (kind) {
    case UncertaintyKind::PE: return predictive_entropy(stack, std::move(image_id));
    case UncertaintyKind::EE: return expected_entropy(stack, std::move(image_id));
    case UncertaintyKind::BALD: return bald(stack, std::move(image_id));
    }
    return predictive_entropy(stack, std::move(image_id));
}

}  // namespace patchal
