#pragma once

// Desk-scale stand-in for a segmentation training stack: a synthetic 3D
// dataset generator and a bootstrap-ensemble k-NN voxel classifier that only
// ever sees annotated voxels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchal/aggregate.hpp"
#include "patchal/knn.hpp"
#include "patchal/parallel.hpp"
#include "patchal/query.hpp"
#include "patchal/rng.hpp"
#include "patchal/volumes.hpp"

namespace patchal {

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
    int num_images = 20;
    Shape3 shape{32, 32, 32};
    int num_classes = 3;
    int shapes_min = 1;
    int shapes_max = 3;
    double noise_std = 0.5;
    double fg_fraction_target = 0.015;
    double class_contrast = 1.0;  // mean intensity of class c is c * class_contrast
    std::uint64_t seed = 0;

    void validate() const
    {
        if (num_images < 1 || !shape.valid() || num_classes < 2 || num_classes > 254 || shapes_min < 1 ||
            shapes_max < shapes_min || noise_std < 0.0 || !(fg_fraction_target > 0.0 && fg_fraction_target < 1.0)) {
            throw Error(ErrorCode::SpecInfeasible, "invalid synthetic dataset spec");
        }
    }
};

enum class ShapeKind { sphere, ellipsoid, box };

struct ShapeRecord {
    int cls = 1;
    ShapeKind kind = ShapeKind::sphere;
    std::array<double, 3> center{};
    std::array<double, 3> radii{};  // semi-axes, or half-extents for boxes

    [[nodiscard]] bool contains(double z, double y, double x) const noexcept
    {
        const double dz = (z - center[0]) / radii[0];
        const double dy = (y - center[1]) / radii[1];
        const double dx = (x - center[2]) / radii[2];
        if (kind == ShapeKind::box) return std::abs(dz) <= 1.0 && std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        return dz * dz + dy * dy + dx * dx <= 1.0;
    }
};

struct SyntheticDataset {
    std::vector<std::string> ids;
    std::vector<FloatVolume> images;
    std::vector<LabelVolume> labels;
    std::vector<std::vector<ShapeRecord>> shapes;
    int num_classes = 2;

    [[nodiscard]] double foreground_fraction() const
    {
        std::int64_t fg = 0, total = 0;
        for (const auto& l : labels) {
            total += l.labels.size();
            for (auto v : l.labels.values()) fg += v != 0;
        }
        return total == 0 ? 0.0 : static_cast<double>(fg) / static_cast<double>(total);
    }
};

/// Paints `shape` into `labels` (later shapes overwrite earlier ones).
inline void render_shape(LabelVolume& labels, const ShapeRecord& shape)
{
    const auto ext = labels.shape().extents();
    std::array<std::int64_t, 3> lo{}, hi{};
    for (int k = 0; k < 3; ++k) {
        lo[k] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(shape.center[k] - shape.radii[k])));
        hi[k] = std::min<std::int64_t>(ext[k] - 1, static_cast<std::int64_t>(std::ceil(shape.center[k] + shape.radii[k])));
    }
    for (auto z = lo[0]; z <= hi[0]; ++z)
        for (auto y = lo[1]; y <= hi[1]; ++y)
            for (auto x = lo[2]; x <= hi[2]; ++x)
                if (shape.contains(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)))
                    labels.labels(z, y, x) = static_cast<std::uint8_t>(shape.cls);
}

inline std::string synthetic_id(int i)
{
    std::string s = std::to_string(i);
    return "img_" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

/// Background ~ N(0, noise^2); each foreground class gets shapes_min..shapes_max
/// spheres, ellipsoids or boxes whose volume targets the requested foreground
/// fraction, with intensity c * class_contrast plus the same noise.
inline SyntheticDataset generate_dataset(const SyntheticSpec& spec)
{
    spec.validate();
    SyntheticDataset ds;
    ds.num_classes = spec.num_classes;
    const auto ext = spec.shape.extents();
    const double per_class_voxels =
        spec.fg_fraction_target * static_cast<double>(spec.shape.voxels()) / (spec.num_classes - 1);

    for (int i = 0; i < spec.num_images; ++i) {
        auto rng = RngStream::keyed(spec.seed, 0, StreamPurpose::Synthetic, static_cast<std::uint64_t>(i));
        LabelVolume labels{Volume<std::uint8_t>(spec.shape, 0), spec.num_classes};
        std::vector<ShapeRecord> shapes;
        for (int c = 1; c < spec.num_classes; ++c) {
            const int count = static_cast<int>(rng.between(spec.shapes_min, spec.shapes_max));
            const double volume = per_class_voxels / count;
            for (int s = 0; s < count; ++s) {
                ShapeRecord rec;
                rec.cls = c;
                rec.kind = static_cast<ShapeKind>(rng.below(3));
                std::array<double, 3> aspect{1.0, 1.0, 1.0};
                if (rec.kind != ShapeKind::sphere) {
                    for (auto& a : aspect) a = 0.7 + 0.7 * rng.uniform();
                    const double norm = std::cbrt(aspect[0] * aspect[1] * aspect[2]);
                    for (auto& a : aspect) a /= norm;
                }
                const double base = rec.kind == ShapeKind::box ? std::cbrt(volume / 8.0)
                                                               : std::cbrt(3.0 * volume / (4.0 * std::numbers::pi));
                for (int k = 0; k < 3; ++k) {
                    rec.radii[k] = std::max(1.0, base * aspect[k]);
                    const double lo = rec.radii[k];
                    const double hi = static_cast<double>(ext[k] - 1) - rec.radii[k];
                    if (hi < lo) throw Error(ErrorCode::SpecInfeasible, "shape does not fit inside the image");
                    rec.center[k] = lo + (hi - lo) * rng.uniform();
                }
                render_shape(labels, rec);
                shapes.push_back(rec);
            }
        }
        FloatVolume image(spec.shape);
        for (std::int64_t v = 0; v < image.size(); ++v) {
            const double mean = labels.labels[v] * spec.class_contrast;
            image[v] = static_cast<float>(spec.noise_std > 0.0 ? mean + spec.noise_std * rng.normal() : mean);
        }
        ds.ids.push_back(synthetic_id(i));
        ds.images.push_back(std::move(image));
        ds.labels.push_back(std::move(labels));
        ds.shapes.push_back(std::move(shapes));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Learner

enum class KnnIndex { brute, kdtree };

struct LearnerConfig {
    int ensemble_size = 5;
    int k = 5;
    bool use_intensity = true;
    bool use_smoothed = true;
    bool use_coords = true;
    double coord_weight = 1.0;
    double training_fraction = 1.0;  // subsample of annotated voxels per member
    bool bootstrap = true;
    KnnIndex index = KnnIndex::brute;

    void validate() const
    {
        if (ensemble_size < 1 || k < 1) throw Error(ErrorCode::InvalidArgument, "ensemble_size and k must be >= 1");
        if (!(training_fraction > 0.0 && training_fraction <= 1.0)) {
            throw Error(ErrorCode::InvalidArgument, "training_fraction must be in (0,1]");
        }
        if (!use_intensity && !use_smoothed && !use_coords) throw Error(ErrorCode::InvalidArgument, "no features enabled");
    }

    [[nodiscard]] int feature_count() const { return int{use_intensity} + int{use_smoothed} + 3 * int{use_coords}; }
};

/// Raw (unnormalized) per-voxel features of one image, row-major V x F.
struct FeatureMatrix {
    int dims = 0;
    std::vector<float> values;

    [[nodiscard]] std::span<const float> row(std::int64_t v) const
    {
        return {values.data() + v * dims, static_cast<std::size_t>(dims)};
    }
};

inline FeatureMatrix compute_features(const LearnerConfig& cfg, const FloatVolume& image)
{
    const auto& shape = image.shape();
    const auto [d, h, w] = shape.extents();
    FeatureMatrix fm{cfg.feature_count(), {}};
    fm.values.resize(static_cast<std::size_t>(image.size()) * fm.dims);
    std::optional<SummedAreaTable3D> sat;
    if (cfg.use_smoothed) sat.emplace(image);
    auto norm = [](std::int64_t i, std::int64_t n) { return n > 1 ? static_cast<float>(i) / static_cast<float>(n - 1) : 0.0f; };

    for (std::int64_t z = 0; z < d; ++z)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                float* out = fm.values.data() + shape.linear(z, y, x) * fm.dims;
                if (cfg.use_intensity) *out++ = image(z, y, x);
                if (cfg.use_smoothed) {
                    const PatchBox nb{{std::max<std::int64_t>(z - 1, 0), std::max<std::int64_t>(y - 1, 0), std::max<std::int64_t>(x - 1, 0)},
                                      {0, 0, 0}};
                    PatchBox box = nb;
                    box.size = {std::min(z + 2, d) - nb.origin[0], std::min(y + 2, h) - nb.origin[1], std::min(x + 2, w) - nb.origin[2]};
                    *out++ = static_cast<float>(sat->box_sum(box) / static_cast<double>(box.voxels()));
                }
                if (cfg.use_coords) {
                    *out++ = norm(z, d);
                    *out++ = norm(y, h);
                    *out++ = norm(x, w);
                }
            }
    return fm;
}

struct EnsembleMember {
    PointSet samples;                 // normalized features
    std::vector<std::uint8_t> labels;
    std::vector<VoxelRef> provenance;  // (image, voxel) each sample came from
    KdTree tree;
};

struct TrainedModel {
    LearnerConfig config;
    int num_classes = 2;
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;  // multiply after centering
    std::vector<EnsembleMember> members;

    void normalize(std::span<const float> raw, std::span<float> out) const
    {
        for (std::size_t f = 0; f < raw.size(); ++f) {
            out[f] = static_cast<float>((static_cast<double>(raw[f]) - feature_mean[f]) * feature_scale[f]);
        }
    }
};

/// Fits one bootstrap member per ensemble slot on annotated voxels only.
/// Bootstrap streams are keyed by (seed, loop, member).
inline TrainedModel train(const LearnerConfig& cfg, std::span<const FloatVolume> images,
                          std::span<const AnnotationMask> masks, std::span<const LabelVolume> labels,
                          std::uint64_t seed, std::uint64_t loop = 0)
{
    cfg.validate();
    if (images.size() != masks.size() || images.size() != labels.size()) {
        throw Error(ErrorCode::InvalidArgument, "images, masks and labels must align");
    }

    TrainedModel model;
    model.config = cfg;
    for (const auto& l : labels) model.num_classes = std::max(model.num_classes, l.num_classes);

    const int dims = cfg.feature_count();
    std::vector<float> raw;
    std::vector<std::uint8_t> y;
    std::vector<VoxelRef> prov;
    for (std::uint32_t i = 0; i < images.size(); ++i) {
        if (masks[i].annotated_voxels() == 0) continue;
        if (!(masks[i].shape() == images[i].shape()) || !(labels[i].shape() == images[i].shape())) {
            throw Error(ErrorCode::ShapeMismatch, "mask/label shape differs from image " + masks[i].image_id());
        }
        const auto fm = compute_features(cfg, images[i]);
        const auto mask = masks[i].voxel_mask();
        for (std::int64_t v = 0; v < images[i].size(); ++v) {
            if (!mask[v]) continue;
            const auto r = fm.row(v);
            raw.insert(raw.end(), r.begin(), r.end());
            y.push_back(labels[i].labels[v]);
            prov.push_back({i, v});
        }
    }
    const std::size_t n = y.size();
    if (n == 0) throw Error(ErrorCode::NoAnnotation, "no annotated voxels to train on");

    model.feature_mean.assign(static_cast<std::size_t>(dims), 0.0);
    model.feature_scale.assign(static_cast<std::size_t>(dims), 1.0);
    for (int f = 0; f < dims; ++f) {
        double sum = 0.0;
        for (std::size_t s = 0; s < n; ++s) sum += raw[s * dims + f];
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t s = 0; s < n; ++s) ss += (raw[s * dims + f] - mean) * (raw[s * dims + f] - mean);
        const double sd = std::sqrt(ss / static_cast<double>(n));
        const bool coord = cfg.use_coords && f >= dims - 3;
        model.feature_mean[f] = mean;
        model.feature_scale[f] = (sd > 1e-12 ? 1.0 / sd : 1.0) * (coord ? cfg.coord_weight : 1.0);
    }

    const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.training_fraction * static_cast<double>(n))));
    model.members.resize(static_cast<std::size_t>(cfg.ensemble_size));
    for (int m = 0; m < cfg.ensemble_size; ++m) {
        auto rng = RngStream::keyed(seed, loop, StreamPurpose::Bootstrap, static_cast<std::uint64_t>(m));
        std::vector<std::uint32_t> chosen(n);
        std::iota(chosen.begin(), chosen.end(), std::uint32_t{0});
        if (take < n) {
            for (std::size_t i = 0; i < take; ++i) std::swap(chosen[i], chosen[i + rng.below(n - i)]);
            chosen.resize(take);
        }
        if (cfg.bootstrap) {
            std::vector<std::uint32_t> boot(chosen.size());
            for (auto& b : boot) b = chosen[rng.below(chosen.size())];
            chosen = std::move(boot);
        }
        auto& member = model.members[m];
        member.samples.dims = dims;
        member.samples.coords.resize(chosen.size() * dims);
        member.labels.reserve(chosen.size());
        member.provenance.reserve(chosen.size());
        for (std::size_t s = 0; s < chosen.size(); ++s) {
            const auto src = chosen[s];
            model.normalize({raw.data() + std::size_t{src} * dims, static_cast<std::size_t>(dims)},
                            {member.samples.coords.data() + s * dims, static_cast<std::size_t>(dims)});
            member.labels.push_back(y[src]);
            member.provenance.push_back(prov[src]);
        }
        if (cfg.index == KnnIndex::kdtree) member.tree = KdTree(member.samples);
    }
    return model;
}

/// Soft k-NN votes per member with inverse-distance weights 1/(d + 1e-6).
inline EnsembleProbabilityStack predict_ensemble(const TrainedModel& model, const FloatVolume& image)
{
    const auto& cfg = model.config;
    const auto fm = compute_features(cfg, image);
    const int members = static_cast<int>(model.members.size());
    const int classes = model.num_classes;
    EnsembleProbabilityStack stack(members, classes, image.shape());
    const int dims = fm.dims;

    parallel_for(image.size(), [&](std::int64_t begin, std::int64_t end) {
        std::vector<float> q(static_cast<std::size_t>(dims));
        std::vector<Neighbor> nn;
        std::vector<double> votes(static_cast<std::size_t>(classes));
        for (std::int64_t v = begin; v < end; ++v) {
            model.normalize(fm.row(v), q);
            for (int m = 0; m < members; ++m) {
                const auto& member = model.members[m];
                if (cfg.index == KnnIndex::kdtree) {
                    member.tree.query(member.samples, q, static_cast<std::size_t>(cfg.k), nn);
                } else {
                    knn_brute(member.samples, q, static_cast<std::size_t>(cfg.k), nn);
                }
                std::fill(votes.begin(), votes.end(), 0.0);
                double total = 0.0;
                for (const auto& nb : nn) {
                    const double wgt = 1.0 / (std::sqrt(nb.dist2) + 1e-6);
                    votes[member.labels[nb.index]] += wgt;
                    total += wgt;
                }
                for (int c = 0; c < classes; ++c) stack.at(m, c, v) = static_cast<float>(votes[c] / total);
            }
        }
    });
    return stack;
}

/// Argmax of the member-mean distribution; ties go to the lowest class id.
inline LabelVolume labels_from_stack(const EnsembleProbabilityStack& stack)
{
    LabelVolume out{Volume<std::uint8_t>(stack.shape(), 0), std::max(stack.classes(), 2)};
    for (std::int64_t v = 0; v < stack.voxels(); ++v) {
        int best = 0;
        double best_p = -1.0;
        for (int c = 0; c < stack.classes(); ++c) {
            double p = 0.0;
            for (int m = 0; m < stack.members(); ++m) p += stack.at(m, c, v);
            if (p > best_p) {
                best_p = p;
                best = c;
            }
        }
        out.labels[v] = static_cast<std::uint8_t>(best);
    }
    return out;
}

inline LabelVolume predict_labels(const TrainedModel& model, const FloatVolume& image)
{
    return labels_from_stack(predict_ensemble(model, image));
}

}  // namespace patchal
