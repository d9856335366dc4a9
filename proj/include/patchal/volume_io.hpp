#pragma once

// NAVOL container:
//   bytes 0-7    ASCII "NAVOL001"
//   bytes 8-11   uint32 little-endian header length N
//   bytes 12..   N bytes of compact JSON
//                {"dtype":"f32|u8|u16","shape":[D,H,W],"kind":"image|label|prob","classes":C?,"members":E?}
//   remainder    raw little-endian payload, row-major; probability stacks are
//                member-then-class-then-voxel.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "patchal/volumes.hpp"

namespace patchal {

inline constexpr char kVolumeMagic[8] = {'N', 'A', 'V', 'O', 'L', '0', '0', '1'};

enum class DType { f32, u8, u16 };
enum class VolumeKind { image, label, prob };

inline std::string dtype_name(DType t)
{
    switch (t) {
    case DType::f32: return "f32";
    case DType::u8: return "u8";
    case DType::u16: return "u16";
    }
    return "?";
}

inline std::string kind_name(VolumeKind k)
{
    switch (k) {
    case VolumeKind::image: return "image";
    case VolumeKind::label: return "label";
    case VolumeKind::prob: return "prob";
    }
    return "?";
}

inline std::size_t dtype_bytes(DType t) { return t == DType::f32 ? 4 : t == DType::u16 ? 2 : 1; }

struct VolumeHeader {
    DType dtype = DType::f32;
    Shape3 shape{};
    VolumeKind kind = VolumeKind::image;
    std::optional<int> classes;
    std::optional<int> members;

    [[nodiscard]] std::int64_t element_count() const
    {
        return shape.voxels() * std::int64_t{members.value_or(1)} *
               (kind == VolumeKind::prob ? std::int64_t{classes.value_or(1)} : 1);
    }

    [[nodiscard]] std::string to_json() const
    {
        nlohmann::ordered_json j;
        j["dtype"] = dtype_name(dtype);
        j["shape"] = {shape.depth, shape.height, shape.width};
        j["kind"] = kind_name(kind);
        if (classes) j["classes"] = *classes;
        if (members) j["members"] = *members;
        return j.dump();
    }

    static VolumeHeader from_json(const std::string& text)
    {
        VolumeHeader h;
        try {
            const auto j = nlohmann::json::parse(text);
            const auto dt = j.at("dtype").get<std::string>();
            if (dt == "f32") h.dtype = DType::f32;
            else if (dt == "u8") h.dtype = DType::u8;
            else if (dt == "u16") h.dtype = DType::u16;
            else throw Error(ErrorCode::HeaderMismatch, "unknown dtype " + dt);
            const auto& s = j.at("shape");
            if (!s.is_array() || s.size() != 3) throw Error(ErrorCode::HeaderMismatch, "shape must have 3 entries");
            h.shape = {s[0].get<std::int64_t>(), s[1].get<std::int64_t>(), s[2].get<std::int64_t>()};
            const auto k = j.at("kind").get<std::string>();
            if (k == "image") h.kind = VolumeKind::image;
            else if (k == "label") h.kind = VolumeKind::label;
            else if (k == "prob") h.kind = VolumeKind::prob;
            else throw Error(ErrorCode::HeaderMismatch, "unknown kind " + k);
            if (j.contains("classes")) h.classes = j["classes"].get<int>();
            if (j.contains("members")) h.members = j["members"].get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::HeaderMismatch, std::string("malformed header: ") + e.what());
        }
        if (!h.shape.valid()) throw Error(ErrorCode::HeaderMismatch, "non-positive shape");
        if (h.kind == VolumeKind::prob && (!h.classes || !h.members || h.dtype != DType::f32)) {
            throw Error(ErrorCode::HeaderMismatch, "prob volumes need f32 dtype, classes and members");
        }
        return h;
    }
};

using VolumePayload = std::variant<Volume<float>, Volume<std::uint8_t>, Volume<std::uint16_t>, EnsembleProbabilityStack>;

struct VolumeFile {
    VolumeHeader header;
    VolumePayload payload;
};

namespace detail {

template <typename T>
void append_le(std::string& out, std::span<const T> values)
{
    const auto offset = out.size();
    out.resize(offset + values.size_bytes());
    std::memcpy(out.data() + offset, values.data(), values.size_bytes());
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            auto* p = out.data() + offset + i * sizeof(T);
            std::reverse(p, p + sizeof(T));
        }
    }
}

template <typename T>
std::vector<T> parse_le(const char* data, std::size_t count)
{
    std::vector<T> out(count);
    std::memcpy(out.data(), data, count * sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        auto* bytes = reinterpret_cast<char*>(out.data());
        for (std::size_t i = 0; i < count; ++i) std::reverse(bytes + i * sizeof(T), bytes + (i + 1) * sizeof(T));
    }
    return out;
}

inline std::string assemble(const VolumeHeader& header, const std::string& payload)
{
    const auto json = header.to_json();
    std::string out(kVolumeMagic, sizeof(kVolumeMagic));
    const auto n = static_cast<std::uint32_t>(json.size());
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((n >> (8 * b)) & 0xFFu));
    out += json;
    out += payload;
    return out;
}

template <typename T>
constexpr DType dtype_of()
{
    if constexpr (std::is_same_v<T, float>) return DType::f32;
    else if constexpr (std::is_same_v<T, std::uint8_t>) return DType::u8;
    else {
        static_assert(std::is_same_v<T, std::uint16_t>, "unsupported voxel type");
        return DType::u16;
    }
}

inline void write_bytes(const std::string& bytes, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

}  // namespace detail

template <typename T>
std::string encode_volume(const Volume<T>& v, VolumeKind kind = VolumeKind::image, std::optional<int> classes = {})
{
    if (!all_finite(v)) throw Error(ErrorCode::NonFiniteData, "volume contains NaN or Inf");
    VolumeHeader h{detail::dtype_of<T>(), v.shape(), kind, classes, std::nullopt};
    std::string payload;
    detail::append_le<T>(payload, v.values());
    return detail::assemble(h, payload);
}

inline std::string encode_labels(const LabelVolume& labels)
{
    labels.validate(true);
    return encode_volume(labels.labels, VolumeKind::label, labels.num_classes);
}

inline std::string encode_stack(const EnsembleProbabilityStack& stack)
{
    for (float p : stack.values())
        if (!std::isfinite(p)) throw Error(ErrorCode::NonFiniteData, "stack contains NaN or Inf");
    VolumeHeader h{DType::f32, stack.shape(), VolumeKind::prob, stack.classes(), stack.members()};
    std::string payload;
    detail::append_le<float>(payload, stack.values());
    return detail::assemble(h, payload);
}

inline VolumeFile decode_volume(const std::string& bytes)
{
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kVolumeMagic, 8) != 0) {
        throw Error(ErrorCode::BadMagic, "missing NAVOL001 magic");
    }
    std::uint32_t n = 0;
    for (int b = 0; b < 4; ++b) n |= std::uint32_t{static_cast<unsigned char>(bytes[8 + b])} << (8 * b);
    if (bytes.size() < 12 + std::size_t{n}) throw Error(ErrorCode::HeaderMismatch, "truncated header");
    const auto header = VolumeHeader::from_json(bytes.substr(12, n));
    const std::size_t payload_bytes = bytes.size() - 12 - n;
    const auto count = static_cast<std::size_t>(header.element_count());
    if (payload_bytes != count * dtype_bytes(header.dtype)) {
        throw Error(ErrorCode::HeaderMismatch, "declared payload size " + std::to_string(count * dtype_bytes(header.dtype)) +
                                                   " bytes but found " + std::to_string(payload_bytes));
    }
    const char* data = bytes.data() + 12 + n;
    VolumeFile file{header, Volume<float>{}};
    switch (header.dtype) {
    case DType::f32: {
        auto values = detail::parse_le<float>(data, count);
        for (float f : values)
            if (!std::isfinite(f)) throw Error(ErrorCode::NonFiniteData, "payload contains NaN or Inf");
        if (header.kind == VolumeKind::prob) {
            file.payload = EnsembleProbabilityStack(*header.members, *header.classes, header.shape, std::move(values));
        } else {
            file.payload = Volume<float>(header.shape, std::move(values));
        }
        break;
    }
    case DType::u8: file.payload = Volume<std::uint8_t>(header.shape, detail::parse_le<std::uint8_t>(data, count)); break;
    case DType::u16: file.payload = Volume<std::uint16_t>(header.shape, detail::parse_le<std::uint16_t>(data, count)); break;
    }
    return file;
}

inline VolumeFile read_volume(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_volume(ss.str());
}

template <typename T>
void write_volume(const Volume<T>& v, const std::filesystem::path& path)
{
    detail::write_bytes(encode_volume(v), path);
}

inline void write_labels(const LabelVolume& labels, const std::filesystem::path& path)
{
    detail::write_bytes(encode_labels(labels), path);
}

inline void write_stack(const EnsembleProbabilityStack& stack, const std::filesystem::path& path)
{
    detail::write_bytes(encode_stack(stack), path);
}

inline FloatVolume read_image(const std::filesystem::path& path)
{
    auto file = read_volume(path);
    if (auto* v = std::get_if<Volume<float>>(&file.payload)) return std::move(*v);
    if (auto* v = std::get_if<Volume<std::uint16_t>>(&file.payload)) {
        FloatVolume out(v->shape());
        for (std::int64_t i = 0; i < v->size(); ++i) out[i] = static_cast<float>((*v)[i]);
        return out;
    }
    if (auto* v = std::get_if<Volume<std::uint8_t>>(&file.payload); v && file.header.kind == VolumeKind::image) {
        FloatVolume out(v->shape());
        for (std::int64_t i = 0; i < v->size(); ++i) out[i] = static_cast<float>((*v)[i]);
        return out;
    }
    throw Error(ErrorCode::HeaderMismatch, path.string() + " is not an image volume");
}

inline LabelVolume read_labels(const std::filesystem::path& path)
{
    auto file = read_volume(path);
    auto* v = std::get_if<Volume<std::uint8_t>>(&file.payload);
    if (!v || file.header.kind != VolumeKind::label || !file.header.classes) {
        throw Error(ErrorCode::HeaderMismatch, path.string() + " is not a label volume");
    }
    LabelVolume out{std::move(*v), *file.header.classes};
    out.validate(true);
    return out;
}

inline EnsembleProbabilityStack read_stack(const std::filesystem::path& path)
{
    auto file = read_volume(path);
    if (auto* s = std::get_if<EnsembleProbabilityStack>(&file.payload)) return std::move(*s);
    throw Error(ErrorCode::HeaderMismatch, path.string() + " is not a probability stack");
}

}  // namespace patchal
