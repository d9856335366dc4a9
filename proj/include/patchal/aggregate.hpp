#pragma once

#include <string>
#include <vector>

#include "patchal/volumes.hpp"

namespace patchal {

/// Inclusive-exclusive 3D prefix sums over a (D+1, H+1, W+1) grid with a zero
/// border, accumulated in double.
class SummedAreaTable3D {
public:
    explicit SummedAreaTable3D(const FloatVolume& map)
        : source_(map.shape()), table_{map.shape().depth + 1, map.shape().height + 1, map.shape().width + 1},
          sums_(static_cast<std::size_t>(table_.voxels()), 0.0)
    {
        const auto [d, h, w] = source_.extents();
        for (std::int64_t z = 1; z <= d; ++z)
            for (std::int64_t y = 1; y <= h; ++y) {
                double row = 0.0;
                for (std::int64_t x = 1; x <= w; ++x) {
                    row += static_cast<double>(map(z - 1, y - 1, x - 1));
                    sums_[idx(z, y, x)] = row + sums_[idx(z, y - 1, x)] + sums_[idx(z - 1, y, x)] -
                                          sums_[idx(z - 1, y - 1, x)];
                }
            }
    }

    [[nodiscard]] const Shape3& source_shape() const noexcept { return source_; }

    /// Entry at prefix corner (z, y, x), each in [0, extent].
    [[nodiscard]] double at(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept { return sums_[idx(z, y, x)]; }

    [[nodiscard]] double total() const noexcept { return at(source_.depth, source_.height, source_.width); }

    [[nodiscard]] double box_sum(const PatchBox& b) const noexcept
    {
        const auto [z0, y0, x0] = b.origin;
        const auto [z1, y1, x1] = b.end();
        return at(z1, y1, x1) - at(z0, y1, x1) - at(z1, y0, x1) - at(z1, y1, x0) + at(z0, y0, x1) + at(z0, y1, x0) +
               at(z1, y0, x0) - at(z0, y0, x0);
    }

private:
    [[nodiscard]] std::size_t idx(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept
    {
        return static_cast<std::size_t>(table_.linear(z, y, x));
    }

    Shape3 source_;
    Shape3 table_;
    std::vector<double> sums_;
};

inline SummedAreaTable3D build_sat(const FloatVolume& map) { return SummedAreaTable3D(map); }

/// Mean score of the patch placed at each valid origin (stride 1, no padding).
struct ScoreField {
    std::string image_id;
    Index3 patch_size{1, 1, 1};
    FloatVolume values;  // shape (D-dz+1, H-dy+1, W-dx+1)

    [[nodiscard]] PatchBox box_at(std::int64_t linear) const
    {
        return PatchBox{values.shape().unravel(linear), patch_size};
    }
};

inline ScoreField window_mean(const SummedAreaTable3D& sat, const Index3& patch_size, std::string image_id = {})
{
    const auto ext = sat.source_shape().extents();
    for (int k = 0; k < 3; ++k) {
        if (patch_size[k] <= 0) throw Error(ErrorCode::InvalidArgument, "patch size must be positive");
        if (patch_size[k] > ext[k]) throw Error(ErrorCode::PatchLargerThanImage, "clamp the patch size first");
    }
    const Shape3 origins{ext[0] - patch_size[0] + 1, ext[1] - patch_size[1] + 1, ext[2] - patch_size[2] + 1};
    ScoreField field{std::move(image_id), patch_size, FloatVolume(origins)};
    const double inv_volume = 1.0 / static_cast<double>(patch_size[0] * patch_size[1] * patch_size[2]);
    for (std::int64_t z = 0; z < origins.depth; ++z)
        for (std::int64_t y = 0; y < origins.height; ++y)
            for (std::int64_t x = 0; x < origins.width; ++x) {
                field.values(z, y, x) = static_cast<float>(sat.box_sum(PatchBox{{z, y, x}, patch_size}) * inv_volume);
            }
    return field;
}

/// Clamps the patch to the map and aggregates in one step.
inline ScoreField aggregate_mean(const FloatVolume& map, const Index3& requested_patch, std::string image_id = {})
{
    return window_mean(build_sat(map), clamp_patch(requested_patch, map.shape()), std::move(image_id));
}

}  // namespace patchal
