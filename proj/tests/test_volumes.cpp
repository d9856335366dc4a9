#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "patchal/dataset.hpp"
#include "patchal/volume_io.hpp"
#include "patchal/volumes.hpp"

using namespace patchal;

namespace {

std::filesystem::path temp_path(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / "patchal_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

void expect_error(ErrorCode code, const std::function<void()>& f)
{
    try {
        f();
        ADD_FAILURE() << "expected " << to_string(code);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), code) << e.what();
    }
}

}  // namespace

TEST(VolumeIo, ZerosRoundTrip)
{
    const FloatVolume v(Shape3{2, 2, 2}, 0.0f);
    const auto path = temp_path("zeros.navol");
    write_volume(v, path);
    EXPECT_EQ(read_image(path), v);
}

TEST(VolumeIo, DeclaredSizeLargerThanPayload)
{
    auto bytes = encode_volume(FloatVolume(Shape3{4, 4, 4}, 1.0f));
    bytes.resize(bytes.size() - 4);  // 255 floats instead of 256
    expect_error(ErrorCode::HeaderMismatch, [&] { decode_volume(bytes); });
}

TEST(VolumeIo, WrongMagic)
{
    RngStream rng(3);
    std::string junk(64, '\0');
    for (auto& c : junk) c = static_cast<char>(rng.below(256));
    junk[0] = 'X';
    expect_error(ErrorCode::BadMagic, [&] { decode_volume(junk); });
    const auto path = temp_path("junk.navol");
    detail::write_bytes(junk, path);
    expect_error(ErrorCode::BadMagic, [&] { read_volume(path); });
}

TEST(VolumeIo, DeterministicBytes)
{
    RngStream rng(11);
    const auto v = oracle::random_map(Shape3{3, 4, 5}, rng);
    const auto a = temp_path("det_a.navol"), b = temp_path("det_b.navol");
    write_volume(v, a);
    write_volume(v, b);
    EXPECT_EQ(read_text(a), read_text(b));
}

TEST(VolumeIo, RejectsNonFinite)
{
    FloatVolume v(Shape3{1, 2, 2}, 0.5f);
    v[3] = std::numeric_limits<float>::quiet_NaN();
    expect_error(ErrorCode::NonFiniteData, [&] { write_volume(v, temp_path("nan.navol")); });

    // A hand-built file with an Inf payload is rejected on load as well.
    auto bytes = encode_volume(FloatVolume(Shape3{1, 1, 1}, 0.0f));
    const float inf = std::numeric_limits<float>::infinity();
    std::memcpy(bytes.data() + bytes.size() - 4, &inf, 4);
    expect_error(ErrorCode::NonFiniteData, [&] { decode_volume(bytes); });
}

TEST(VolumeIo, SingleByteVolumeLayout)
{
    const Volume<std::uint8_t> v(Shape3{1, 1, 1}, 7);
    const auto bytes = encode_volume(v);

    // Assembled independently from the container layout.
    const std::string json = R"({"dtype":"u8","shape":[1,1,1],"kind":"image"})";
    std::string expected = "NAVOL001";
    const auto n = static_cast<std::uint32_t>(json.size());
    expected.push_back(static_cast<char>(n & 0xFF));
    expected.push_back(static_cast<char>((n >> 8) & 0xFF));
    expected.push_back(static_cast<char>((n >> 16) & 0xFF));
    expected.push_back(static_cast<char>((n >> 24) & 0xFF));
    expected += json;
    expected.push_back('\x07');
    EXPECT_EQ(bytes, expected);
}

TEST(VolumeIo, LabelAndStackRoundTrip)
{
    LabelVolume labels{Volume<std::uint8_t>(Shape3{2, 3, 4}, 0), 4};
    labels.labels[5] = 3;
    labels.labels[7] = 1;
    const auto lp = temp_path("labels.navol");
    write_labels(labels, lp);
    EXPECT_EQ(read_labels(lp), labels);

    RngStream rng(5);
    const auto stack = oracle::random_stack(3, 4, Shape3{2, 2, 3}, rng);
    const auto sp = temp_path("stack.navol");
    write_stack(stack, sp);
    EXPECT_EQ(read_stack(sp), stack);
    EXPECT_EQ(read_volume(sp).header.to_json(), R"({"dtype":"f32","shape":[2,2,3],"kind":"prob","classes":4,"members":3})");
}

TEST(VolumeIo, RandomRoundTripProperty)
{
    RngStream rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const Shape3 s{rng.between(1, 6), rng.between(1, 6), rng.between(1, 6)};
        FloatVolume f(s);
        Volume<std::uint16_t> u(s);
        for (std::int64_t i = 0; i < f.size(); ++i) {
            f[i] = static_cast<float>(rng.normal() * 1e3);
            u[i] = static_cast<std::uint16_t>(rng.below(65536));
        }
        const auto ff = decode_volume(encode_volume(f));
        const auto uu = decode_volume(encode_volume(u));
        EXPECT_EQ(std::get<Volume<float>>(ff.payload), f);
        EXPECT_EQ(std::get<Volume<std::uint16_t>>(uu.payload), u);
        EXPECT_EQ(encode_volume(std::get<Volume<float>>(ff.payload)), encode_volume(f));
    }
}

TEST(Patches, ClampPatch)
{
    EXPECT_EQ(clamp_patch({4, 40, 40}, Shape3{10, 50, 50}), (Index3{4, 40, 40}));
    EXPECT_EQ(clamp_patch({20, 20, 20}, Shape3{12, 64, 64}), (Index3{12, 20, 20}));
    EXPECT_EQ(clamp_patch({64, 64, 64}, Shape3{32, 32, 32}), (Index3{32, 32, 32}));
}

TEST(Patches, OverlapFractionExamples)
{
    const PatchBox a{{0, 0, 0}, {2, 2, 2}};
    EXPECT_DOUBLE_EQ(overlap_fraction(a, a), 1.0);
    EXPECT_DOUBLE_EQ(overlap_fraction(a, PatchBox{{2, 0, 0}, {2, 2, 2}}), 0.0);
    EXPECT_DOUBLE_EQ(overlap_fraction(a, PatchBox{{1, 0, 0}, {2, 2, 2}}), 0.5);
}

TEST(Patches, OverlapMatchesVoxelOracle)
{
    RngStream rng(42);
    const Shape3 shape{16, 16, 16};
    for (int trial = 0; trial < 300; ++trial) {
        const auto a = oracle::random_box(shape, rng);
        const auto b = oracle::random_box(shape, rng);
        const auto shared = oracle::shared_voxels(a, b);
        EXPECT_EQ(intersection_voxels(a, b), shared);
        EXPECT_NEAR(overlap_fraction(a, b) * a.voxels(), static_cast<double>(shared), 1e-9);
        EXPECT_NEAR(overlap_fraction(a, b) * a.voxels(), overlap_fraction(b, a) * b.voxels(), 1e-9);
    }
}

TEST(Annotation, UnionExamples)
{
    const Shape3 shape{8, 8, 8};
    AnnotationMask empty("img", shape);
    const PatchBox box{{0, 0, 0}, {2, 2, 2}};

    const auto once = union_annotation(empty, box);
    EXPECT_EQ(once.annotated_voxels(), 8);
    EXPECT_EQ(empty.annotated_voxels(), 0);  // input untouched
    const auto twice = union_annotation(once, box);
    EXPECT_EQ(twice.annotated_voxels(), 8);
    EXPECT_EQ(twice.boxes().size(), 1u);

    EXPECT_EQ(union_annotation(once, PatchBox{{4, 4, 4}, {2, 2, 2}}).annotated_voxels(), 16);
    EXPECT_EQ(union_annotation(once, PatchBox{{1, 0, 0}, {2, 2, 2}}).annotated_voxels(), 12);

    expect_error(ErrorCode::OutOfBounds, [&] { union_annotation(empty, PatchBox{{7, 0, 0}, {2, 2, 2}}); });
}

TEST(Annotation, CountMatchesBruteForceUnion)
{
    RngStream rng(8);
    const Shape3 shape{16, 16, 16};
    for (int trial = 0; trial < 200; ++trial) {
        AnnotationMask mask("img", shape);
        std::vector<PatchBox> boxes;
        const auto count = rng.between(1, 6);
        for (int i = 0; i < count; ++i) {
            auto b = oracle::random_box(shape, rng);
            boxes.push_back(b);
            mask = union_annotation(mask, b);
        }
        EXPECT_EQ(mask.annotated_voxels(), oracle::union_count(boxes));
        std::int64_t pop = 0;
        for (auto v : mask.voxel_mask()) pop += v;
        EXPECT_EQ(pop, mask.annotated_voxels());
    }
}
