#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "patchal/error.hpp"

namespace patchal {

/// (z, y, x) triple used for both positions and extents. Axis order is
/// depth-major everywhere in the library.
using Index3 = std::array<std::int64_t, 3>;

struct Shape3 {
    std::int64_t depth = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;

    [[nodiscard]] constexpr std::int64_t voxels() const noexcept { return depth * height * width; }
    [[nodiscard]] constexpr Index3 extents() const noexcept { return {depth, height, width}; }
    [[nodiscard]] constexpr bool valid() const noexcept { return depth > 0 && height > 0 && width > 0; }
    [[nodiscard]] constexpr std::int64_t linear(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept
    {
        return (z * height + y) * width + x;
    }
    [[nodiscard]] constexpr Index3 unravel(std::int64_t i) const noexcept
    {
        return {i / (height * width), (i / width) % height, i % width};
    }

    friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

inline Shape3 shape_from(const Index3& e) { return {e[0], e[1], e[2]}; }

/// Dense row-major scalar field (W fastest).
template <typename T>
class Volume {
public:
    using value_type = T;

    Volume() = default;
    explicit Volume(Shape3 shape, T fill = T{}) : shape_(shape), data_(checked_size(shape), fill) {}
    Volume(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data))
    {
        if (static_cast<std::int64_t>(data_.size()) != checked_size(shape)) {
            throw Error(ErrorCode::HeaderMismatch, "payload length does not match shape");
        }
    }

    [[nodiscard]] const Shape3& shape() const noexcept { return shape_; }
    [[nodiscard]] std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }

    T& operator()(std::int64_t z, std::int64_t y, std::int64_t x) { return data_[shape_.linear(z, y, x)]; }
    const T& operator()(std::int64_t z, std::int64_t y, std::int64_t x) const
    {
        return data_[shape_.linear(z, y, x)];
    }
    T& operator[](std::int64_t i) { return data_[i]; }
    const T& operator[](std::int64_t i) const { return data_[i]; }

    [[nodiscard]] std::span<T> values() noexcept { return data_; }
    [[nodiscard]] std::span<const T> values() const noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& storage() const noexcept { return data_; }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    static std::int64_t checked_size(const Shape3& s)
    {
        if (!s.valid()) {
            throw Error(ErrorCode::InvalidArgument, "volume shape components must be positive");
        }
        return s.voxels();
    }

    Shape3 shape_{};
    std::vector<T> data_;
};

using FloatVolume = Volume<float>;

inline constexpr std::uint8_t kUnlabeled = 255;

/// Class-id volume. Ground truth never contains kUnlabeled.
struct LabelVolume {
    Volume<std::uint8_t> labels;
    int num_classes = 2;

    [[nodiscard]] const Shape3& shape() const noexcept { return labels.shape(); }

    void validate(bool allow_unlabeled = false) const
    {
        if (num_classes < 2 || num_classes > 255) {
            throw Error(ErrorCode::InvalidArgument, "num_classes must be in [2, 255]");
        }
        for (auto v : labels.values()) {
            if (v == kUnlabeled && allow_unlabeled) continue;
            if (v >= num_classes) {
                throw Error(ErrorCode::InvalidArgument, "label value out of class range");
            }
        }
    }

    friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

template <typename T>
bool all_finite(const Volume<T>& v)
{
    if constexpr (std::is_floating_point_v<T>) {
        return std::all_of(v.values().begin(), v.values().end(), [](T x) { return std::isfinite(x); });
    } else {
        return true;
    }
}

// ---------------------------------------------------------------------------
// Patch boxes

struct PatchBox {
    Index3 origin{0, 0, 0};
    Index3 size{1, 1, 1};

    [[nodiscard]] std::int64_t voxels() const noexcept { return size[0] * size[1] * size[2]; }
    [[nodiscard]] Index3 end() const noexcept
    {
        return {origin[0] + size[0], origin[1] + size[1], origin[2] + size[2]};
    }
    [[nodiscard]] bool inside(const Shape3& shape) const noexcept
    {
        const auto ext = shape.extents();
        for (int k = 0; k < 3; ++k) {
            if (origin[k] < 0 || size[k] <= 0 || origin[k] + size[k] > ext[k]) return false;
        }
        return true;
    }
    [[nodiscard]] bool contains(const Index3& p) const noexcept
    {
        for (int k = 0; k < 3; ++k) {
            if (p[k] < origin[k] || p[k] >= origin[k] + size[k]) return false;
        }
        return true;
    }

    friend constexpr bool operator==(const PatchBox&, const PatchBox&) = default;
};

/// Per-axis min of the requested patch size and the image extent.
inline Index3 clamp_patch(const Index3& requested, const Shape3& image)
{
    const auto ext = image.extents();
    Index3 out{};
    for (int k = 0; k < 3; ++k) {
        if (requested[k] <= 0) {
            throw Error(ErrorCode::InvalidArgument, "patch size components must be positive");
        }
        out[k] = std::min(requested[k], ext[k]);
    }
    return out;
}

inline std::int64_t intersection_voxels(const PatchBox& a, const PatchBox& b) noexcept
{
    std::int64_t n = 1;
    for (int k = 0; k < 3; ++k) {
        const auto lo = std::max(a.origin[k], b.origin[k]);
        const auto hi = std::min(a.origin[k] + a.size[k], b.origin[k] + b.size[k]);
        if (hi <= lo) return 0;
        n *= hi - lo;
    }
    return n;
}

/// Shared voxels as a fraction of `a`'s volume (the candidate box).
inline double overlap_fraction(const PatchBox& a, const PatchBox& b) noexcept
{
    return static_cast<double>(intersection_voxels(a, b)) / static_cast<double>(a.voxels());
}

template <typename F>
void for_each_voxel(const PatchBox& box, const Shape3& shape, F&& f)
{
    const auto e = box.end();
    for (auto z = box.origin[0]; z < e[0]; ++z)
        for (auto y = box.origin[1]; y < e[1]; ++y)
            for (auto x = box.origin[2]; x < e[2]; ++x) f(shape.linear(z, y, x));
}

// ---------------------------------------------------------------------------
// Annotation masks

/// Which voxels of one image are annotated. The voxel mask is always the
/// union of `boxes()`.
class AnnotationMask {
public:
    AnnotationMask() = default;
    AnnotationMask(std::string image_id, Shape3 shape)
        : image_id_(std::move(image_id)), shape_(shape), mask_(static_cast<std::size_t>(shape.voxels()), 0)
    {
    }

    [[nodiscard]] const std::string& image_id() const noexcept { return image_id_; }
    [[nodiscard]] const Shape3& shape() const noexcept { return shape_; }
    [[nodiscard]] const std::vector<PatchBox>& boxes() const noexcept { return boxes_; }
    [[nodiscard]] std::int64_t annotated_voxels() const noexcept { return count_; }
    [[nodiscard]] bool annotated(std::int64_t linear) const noexcept { return mask_[linear] != 0; }
    [[nodiscard]] std::span<const std::uint8_t> voxel_mask() const noexcept { return mask_; }
    [[nodiscard]] bool saturated() const noexcept { return count_ == shape_.voxels(); }

    /// True when any voxel of `box` is already annotated.
    [[nodiscard]] bool touches(const PatchBox& box) const
    {
        const auto e = box.end();
        for (auto z = box.origin[0]; z < e[0]; ++z)
            for (auto y = box.origin[1]; y < e[1]; ++y) {
                const auto row = shape_.linear(z, y, box.origin[2]);
                for (auto x = std::int64_t{0}; x < box.size[2]; ++x)
                    if (mask_[row + x]) return true;
            }
        return false;
    }

    friend AnnotationMask union_annotation(const AnnotationMask& mask, const PatchBox& box);

private:
    std::string image_id_;
    Shape3 shape_{};
    std::vector<PatchBox> boxes_;
    std::vector<std::uint8_t> mask_;
    std::int64_t count_ = 0;
};

/// Returns a new mask with `box` added; the input is left untouched.
inline AnnotationMask union_annotation(const AnnotationMask& mask, const PatchBox& box)
{
    if (!box.inside(mask.shape_)) {
        throw Error(ErrorCode::OutOfBounds, "patch box outside image " + mask.image_id_);
    }
    AnnotationMask out = mask;
    if (std::find(out.boxes_.begin(), out.boxes_.end(), box) == out.boxes_.end()) {
        out.boxes_.push_back(box);
    }
    for_each_voxel(box, out.shape_, [&](std::int64_t i) {
        if (!out.mask_[i]) {
            out.mask_[i] = 1;
            ++out.count_;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Ensemble probability stacks

/// Softmax outputs laid out [member][class][voxel].
class EnsembleProbabilityStack {
public:
    EnsembleProbabilityStack() = default;
    EnsembleProbabilityStack(int members, int classes, Shape3 shape)
        : members_(members), classes_(classes), shape_(shape),
          data_(static_cast<std::size_t>(members) * classes * shape.voxels(), 0.0f)
    {
        if (members < 0 || classes < 1 || !shape.valid()) {
            throw Error(ErrorCode::InvalidArgument, "bad ensemble stack dimensions");
        }
    }
    EnsembleProbabilityStack(int members, int classes, Shape3 shape, std::vector<float> data)
        : members_(members), classes_(classes), shape_(shape), data_(std::move(data))
    {
        if (static_cast<std::int64_t>(data_.size()) != std::int64_t{members} * classes * shape.voxels()) {
            throw Error(ErrorCode::HeaderMismatch, "stack payload length does not match dimensions");
        }
    }

    [[nodiscard]] int members() const noexcept { return members_; }
    [[nodiscard]] int classes() const noexcept { return classes_; }
    [[nodiscard]] const Shape3& shape() const noexcept { return shape_; }
    [[nodiscard]] std::int64_t voxels() const noexcept { return shape_.voxels(); }

    float& at(int member, int cls, std::int64_t voxel)
    {
        return data_[(static_cast<std::size_t>(member) * classes_ + cls) * shape_.voxels() + voxel];
    }
    [[nodiscard]] float at(int member, int cls, std::int64_t voxel) const
    {
        return data_[(static_cast<std::size_t>(member) * classes_ + cls) * shape_.voxels() + voxel];
    }

    [[nodiscard]] std::span<const float> values() const noexcept { return data_; }

    /// Checks every member distribution lies in [0,1] and sums to 1 within `tol`.
    void validate(double tol = 1e-4) const
    {
        const auto n = voxels();
        for (int m = 0; m < members_; ++m)
            for (std::int64_t v = 0; v < n; ++v) {
                double sum = 0.0;
                for (int c = 0; c < classes_; ++c) {
                    const float p = at(m, c, v);
                    if (!std::isfinite(p) || p < 0.0f || p > 1.0f) {
                        throw Error(ErrorCode::InvalidArgument, "probability outside [0,1]");
                    }
                    sum += p;
                }
                if (std::abs(sum - 1.0) > tol) {
                    throw Error(ErrorCode::InvalidArgument, "class probabilities do not sum to 1");
                }
            }
    }

    friend bool operator==(const EnsembleProbabilityStack&, const EnsembleProbabilityStack&) = default;

private:
    int members_ = 0;
    int classes_ = 0;
    Shape3 shape_{};
    std::vector<float> data_;
};

}  // namespace patchal
