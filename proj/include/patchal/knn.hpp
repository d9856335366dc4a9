#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace patchal {

struct Neighbor {
    double dist2 = 0.0;
    std::uint32_t index = 0;

    friend bool operator<(const Neighbor& a, const Neighbor& b) noexcept
    {
        return a.dist2 != b.dist2 ? a.dist2 < b.dist2 : a.index < b.index;
    }
};

/// Row-major point set (n x dims) in float.
struct PointSet {
    int dims = 0;
    std::vector<float> coords;

    [[nodiscard]] std::size_t size() const noexcept { return dims == 0 ? 0 : coords.size() / dims; }
    [[nodiscard]] const float* row(std::size_t i) const noexcept { return coords.data() + i * dims; }

    [[nodiscard]] double dist2(std::size_t i, std::span<const float> q) const noexcept
    {
        const float* p = row(i);
        double s = 0.0;
        for (int d = 0; d < dims; ++d) {
            const double diff = static_cast<double>(p[d]) - static_cast<double>(q[d]);
            s += diff * diff;
        }
        return s;
    }
};

namespace detail {

/// Keeps the k smallest neighbours under the (dist2, index) order.
class KBest {
public:
    explicit KBest(std::size_t k) : k_(k) { items_.reserve(k + 1); }

    [[nodiscard]] bool full() const noexcept { return items_.size() == k_; }
    [[nodiscard]] double worst() const noexcept
    {
        return full() ? items_.back().dist2 : std::numeric_limits<double>::infinity();
    }

    void offer(Neighbor n)
    {
        if (full() && !(n < items_.back())) return;
        auto pos = std::upper_bound(items_.begin(), items_.end(), n);
        items_.insert(pos, n);
        if (items_.size() > k_) items_.pop_back();
    }

    std::vector<Neighbor>& items() noexcept { return items_; }

private:
    std::size_t k_;
    std::vector<Neighbor> items_;
};

}  // namespace detail

/// Exhaustive scan. Result is sorted by (dist2, index).
inline void knn_brute(const PointSet& pts, std::span<const float> q, std::size_t k, std::vector<Neighbor>& out)
{
    detail::KBest best(std::min(k, pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) best.offer({pts.dist2(i, q), static_cast<std::uint32_t>(i)});
    out = std::move(best.items());
}

/// Exact k-d tree over a PointSet. Returns exactly the same neighbours as
/// knn_brute, including tie order.
class KdTree {
public:
    KdTree() = default;
    /// The tree keeps no reference to `pts`; pass the same set to query().
    explicit KdTree(const PointSet& pts, std::size_t leaf_size = 8) : leaf_size_(leaf_size)
    {
        order_.resize(pts.size());
        std::iota(order_.begin(), order_.end(), std::uint32_t{0});
        if (!order_.empty()) build(pts, 0, order_.size());
    }

    void query(const PointSet& pts, std::span<const float> q, std::size_t k, std::vector<Neighbor>& out) const
    {
        detail::KBest best(std::min(k, order_.size()));
        if (!nodes_.empty()) search(pts, 0, q, best);
        out = std::move(best.items());
    }

private:
    struct Node {
        std::uint32_t begin = 0, end = 0;
        int split_dim = -1;  // -1 for leaves
        float split = 0.0f;
        std::int32_t left = -1, right = -1;
    };

    std::int32_t build(const PointSet& pts, std::size_t begin, std::size_t end)
    {
        const auto id = static_cast<std::int32_t>(nodes_.size());
        nodes_.push_back({static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end)});
        if (end - begin <= leaf_size_) return id;

        const int dims = pts.dims;
        int best_dim = 0;
        float best_spread = -1.0f;
        for (int d = 0; d < dims; ++d) {
            float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
            for (auto i = begin; i < end; ++i) {
                const float v = pts.row(order_[i])[d];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if (best_spread <= 0.0f) return id;  // all points identical

        const auto mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::uint32_t a, std::uint32_t b) {
                             const float va = pts.row(a)[best_dim], vb = pts.row(b)[best_dim];
                             return va != vb ? va < vb : a < b;
                         });
        const float split = pts.row(order_[mid])[best_dim];
        const auto left = build(pts, begin, mid);
        const auto right = build(pts, mid, end);
        nodes_[id].split_dim = best_dim;
        nodes_[id].split = split;
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    void search(const PointSet& pts, std::int32_t id, std::span<const float> q, detail::KBest& best) const
    {
        const Node& n = nodes_[id];
        if (n.split_dim < 0) {
            for (auto i = n.begin; i < n.end; ++i) best.offer({pts.dist2(order_[i], q), order_[i]});
            return;
        }
        // Left holds values <= split, right holds values >= split.
        const double diff = static_cast<double>(q[n.split_dim]) - static_cast<double>(n.split);
        const auto near = diff <= 0.0 ? n.left : n.right;
        const auto far = diff <= 0.0 ? n.right : n.left;
        search(pts, near, q, best);
        // Equality keeps equidistant points reachable so tie order matches brute force.
        if (diff * diff <= best.worst()) search(pts, far, q, best);
    }

    std::size_t leaf_size_ = 8;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

}  // namespace patchal
