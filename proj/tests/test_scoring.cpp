#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "patchal/aggregate.hpp"
#include "patchal/uncertainty.hpp"

using namespace patchal;

namespace {

EnsembleProbabilityStack constant_stack(const std::vector<std::vector<float>>& members, const Shape3& shape)
{
    const int e = static_cast<int>(members.size());
    const int c = static_cast<int>(members.front().size());
    EnsembleProbabilityStack s(e, c, shape);
    for (int m = 0; m < e; ++m)
        for (int k = 0; k < c; ++k)
            for (std::int64_t v = 0; v < shape.voxels(); ++v) s.at(m, k, v) = members[m][k];
    return s;
}

void expect_all_near(const FloatVolume& v, double x, double tol)
{
    for (float f : v.values()) ASSERT_NEAR(f, x, tol);
}

}  // namespace

TEST(Uncertainty, UniformTwoClassPE)
{
    const auto s = constant_stack({{0.5f, 0.5f}, {0.5f, 0.5f}, {0.5f, 0.5f}}, Shape3{2, 2, 2});
    expect_all_near(predictive_entropy(s).values, 0.693147, 1e-6);
}

TEST(Uncertainty, OneHotAgreementIsCertain)
{
    const auto s = constant_stack({{0.f, 1.f, 0.f}, {0.f, 1.f, 0.f}}, Shape3{1, 2, 3});
    expect_all_near(predictive_entropy(s).values, 0.0, 1e-9);
    expect_all_near(expected_entropy(s).values, 0.0, 1e-9);
    expect_all_near(bald(s).values, 0.0, 1e-9);
}

TEST(Uncertainty, OpposedOneHotMembers)
{
    const auto s = constant_stack({{1.f, 0.f}, {0.f, 1.f}}, Shape3{1, 1, 3});
    expect_all_near(predictive_entropy(s).values, std::log(2.0), 1e-6);
    expect_all_near(expected_entropy(s).values, 0.0, 1e-9);
    expect_all_near(bald(s).values, std::log(2.0), 1e-6);
}

TEST(Uncertainty, SingleUniformMemberEE)
{
    const auto s = constant_stack({{0.25f, 0.25f, 0.25f, 0.25f}}, Shape3{1, 1, 1});
    expect_all_near(expected_entropy(s).values, std::log(4.0), 1e-6);
    expect_all_near(bald(s).values, 0.0, 1e-9);
}

TEST(Uncertainty, ExpectedEntropyIsMemberAverage)
{
    // Two-class distributions solved for entropies 0.3 and 0.5 by bisection.
    auto solve = [](double target) {
        double lo = 1e-9, hi = 0.5;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            (oracle::entropy({mid, 1.0 - mid}) < target ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    };
    const double p = solve(0.3), q = solve(0.5);
    const auto s = constant_stack({{static_cast<float>(p), static_cast<float>(1 - p)},
                                   {static_cast<float>(q), static_cast<float>(1 - q)}},
                                  Shape3{1, 1, 2});
    expect_all_near(expected_entropy(s).values, 0.4, 1e-5);
}

TEST(Uncertainty, ZeroMembersRejected)
{
    EXPECT_THROW(predictive_entropy(EnsembleProbabilityStack(0, 2, Shape3{1, 1, 1})), Error);
}

TEST(Uncertainty, IdentitiesOnRandomStacks)
{
    RngStream rng(1234);
    for (int trial = 0; trial < 200; ++trial) {
        const int e = static_cast<int>(rng.between(1, 8)), c = static_cast<int>(rng.between(2, 6));
        const Shape3 shape{rng.between(1, 4), rng.between(1, 4), rng.between(1, 4)};
        const auto s = oracle::random_stack(e, c, shape, rng);
        const auto pe = predictive_entropy(s).values;
        const auto ee = expected_entropy(s).values;
        const auto mi = bald(s).values;
        for (std::int64_t v = 0; v < shape.voxels(); ++v) {
            ASSERT_GE(ee[v], -1e-9);
            ASSERT_LE(ee[v], pe[v] + 1e-6);
            ASSERT_LE(pe[v], std::log(static_cast<double>(c)) + 1e-6);
            ASSERT_NEAR(mi[v], pe[v] - ee[v], 1e-6);

            // Direct recomputation from the member distributions.
            std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
            double ee_ref = 0.0;
            for (int m = 0; m < e; ++m) {
                std::vector<double> p(static_cast<std::size_t>(c));
                for (int k = 0; k < c; ++k) {
                    p[k] = s.at(m, k, v);
                    mean[k] += p[k] / e;
                }
                ee_ref += oracle::entropy(p) / e;
            }
            ASSERT_NEAR(pe[v], oracle::entropy(mean), 1e-5);
            ASSERT_NEAR(ee[v], ee_ref, 1e-5);
        }
    }
}

TEST(Uncertainty, MemberPermutationInvariant)
{
    RngStream rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const int e = static_cast<int>(rng.between(2, 7)), c = static_cast<int>(rng.between(2, 5));
        const Shape3 shape{2, 3, 3};
        const auto s = oracle::random_stack(e, c, shape, rng);
        std::vector<int> perm(static_cast<std::size_t>(e));
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(std::span<int>(perm));
        EnsembleProbabilityStack t(e, c, shape);
        for (int m = 0; m < e; ++m)
            for (int k = 0; k < c; ++k)
                for (std::int64_t v = 0; v < shape.voxels(); ++v) t.at(m, k, v) = s.at(perm[m], k, v);
        EXPECT_EQ(predictive_entropy(s).values, predictive_entropy(t).values);
        EXPECT_EQ(expected_entropy(s).values, expected_entropy(t).values);
        EXPECT_EQ(bald(s).values, bald(t).values);
    }
}

TEST(Uncertainty, IdenticalMembersHaveNoMutualInformation)
{
    RngStream rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int e = static_cast<int>(rng.between(1, 8)), c = static_cast<int>(rng.between(2, 6));
        const Shape3 shape{2, 2, 2};
        const auto one = oracle::random_stack(1, c, shape, rng);
        EnsembleProbabilityStack s(e, c, shape);
        for (int m = 0; m < e; ++m)
            for (int k = 0; k < c; ++k)
                for (std::int64_t v = 0; v < shape.voxels(); ++v) s.at(m, k, v) = one.at(0, k, v);
        const auto mi = bald(s);
        for (float x : mi.values.values()) ASSERT_LE(x, 1e-9);
    }
}

TEST(Aggregate, SatTotals)
{
    const auto ones = build_sat(FloatVolume(Shape3{2, 2, 2}, 1.0f));
    EXPECT_DOUBLE_EQ(ones.at(2, 2, 2), 8.0);
    const auto zeros = build_sat(FloatVolume(Shape3{3, 2, 4}, 0.0f));
    for (int z = 0; z <= 3; ++z)
        for (int y = 0; y <= 2; ++y)
            for (int x = 0; x <= 4; ++x) EXPECT_EQ(zeros.at(z, y, x), 0.0);
}

TEST(Aggregate, SatBoxSumMatchesDirectSum)
{
    RngStream rng(99);
    const Shape3 shape{7, 9, 6};
    const auto map = oracle::random_map(shape, rng);
    const auto sat = build_sat(map);
    for (int i = 0; i < 200; ++i) {
        const auto b = oracle::random_box(shape, rng);
        EXPECT_NEAR(sat.box_sum(b), oracle::box_sum(map, b), 1e-9);
    }
}

TEST(Aggregate, ConstantMap)
{
    const auto field = aggregate_mean(FloatVolume(Shape3{5, 6, 7}, 0.25f), {2, 3, 4});
    EXPECT_EQ(field.values.shape(), (Shape3{4, 4, 4}));
    expect_all_near(field.values, 0.25, 1e-7);
}

TEST(Aggregate, PairMeans)
{
    FloatVolume map(Shape3{1, 1, 4});
    for (int i = 0; i < 4; ++i) map[i] = static_cast<float>(i + 1);
    const auto field = window_mean(build_sat(map), {1, 1, 2});
    ASSERT_EQ(field.values.size(), 3);
    EXPECT_FLOAT_EQ(field.values[0], 1.5f);
    EXPECT_FLOAT_EQ(field.values[1], 2.5f);
    EXPECT_FLOAT_EQ(field.values[2], 3.5f);
}

TEST(Aggregate, OversizedPatch)
{
    const FloatVolume map(Shape3{4, 4, 4}, 1.0f);
    try {
        window_mean(build_sat(map), {5, 1, 1});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PatchLargerThanImage);
    }
    EXPECT_EQ(aggregate_mean(map, {5, 1, 1}).values.shape(), (Shape3{1, 4, 4}));
}

TEST(Aggregate, MatchesNaiveOracle)
{
    RngStream rng(314);
    for (int trial = 0; trial < 30; ++trial) {
        const Shape3 shape{rng.between(1, 12), rng.between(1, 12), rng.between(1, 12)};
        const Index3 patch{rng.between(1, shape.depth), rng.between(1, shape.height), rng.between(1, shape.width)};
        const auto map = oracle::random_map(shape, rng);
        const auto field = aggregate_mean(map, patch);
        const auto ref = oracle::window_mean(map, patch);
        ASSERT_EQ(static_cast<std::size_t>(field.values.size()), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i)
            ASSERT_NEAR(field.values[static_cast<std::int64_t>(i)], ref[i], 1e-5 * std::max(1.0, std::abs(ref[i])));
    }
}
