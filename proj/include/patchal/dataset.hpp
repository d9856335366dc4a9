#pragma once

// On-disk dataset layout:
//   images/<id>.navol, labels/<id>.navol
//   dataset.json {"ids": [...], "classes": C, "split": {"trainpool": [...], "test": [...]}, ...}

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchal/rng.hpp"
#include "patchal/simlab.hpp"
#include "patchal/volume_io.hpp"

namespace patchal {

struct DatasetSplit {
    std::vector<std::string> trainpool;
    std::vector<std::string> test;
};

/// Seeded shuffle, then 75% (rounded up) to the train/pool side.
inline DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed)
{
    if (ids.size() < 4) throw Error(ErrorCode::TooFewImages, "need at least 4 images to split");
    std::sort(ids.begin(), ids.end());
    auto rng = RngStream::keyed(seed, 0, StreamPurpose::Split);
    rng.shuffle(std::span<std::string>(ids));
    const auto pool = static_cast<std::size_t>(std::ceil(0.75 * static_cast<double>(ids.size())));
    DatasetSplit split;
    split.trainpool.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(pool));
    split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(pool), ids.end());
    return split;
}

struct Dataset {
    std::string name;
    std::vector<std::string> ids;
    std::vector<FloatVolume> images;
    std::vector<LabelVolume> labels;
    int num_classes = 2;
    DatasetSplit split;

    [[nodiscard]] std::size_t index_of(const std::string& id) const
    {
        auto it = std::find(ids.begin(), ids.end(), id);
        if (it == ids.end()) throw Error(ErrorCode::InvalidArgument, "unknown image id " + id);
        return static_cast<std::size_t>(it - ids.begin());
    }
};

// ---------------------------------------------------------------------------
// JSON conversions

inline nlohmann::ordered_json to_json(const SyntheticSpec& s)
{
    return {{"num_images", s.num_images},
            {"shape", {s.shape.depth, s.shape.height, s.shape.width}},
            {"num_classes", s.num_classes},
            {"shapes_per_class", {s.shapes_min, s.shapes_max}},
            {"noise_std", s.noise_std},
            {"fg_fraction_target", s.fg_fraction_target},
            {"class_contrast", s.class_contrast},
            {"seed", s.seed}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j)
{
    SyntheticSpec s;
    s.num_images = j.value("num_images", s.num_images);
    if (j.contains("shape")) {
        const auto& a = j.at("shape");
        s.shape = {a.at(0).get<std::int64_t>(), a.at(1).get<std::int64_t>(), a.at(2).get<std::int64_t>()};
    }
    s.num_classes = j.value("num_classes", s.num_classes);
    if (j.contains("shapes_per_class")) {
        s.shapes_min = j["shapes_per_class"].at(0).get<int>();
        s.shapes_max = j["shapes_per_class"].at(1).get<int>();
    }
    s.noise_std = j.value("noise_std", s.noise_std);
    s.fg_fraction_target = j.value("fg_fraction_target", s.fg_fraction_target);
    s.class_contrast = j.value("class_contrast", s.class_contrast);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
}

/// Builds an in-memory dataset from a synthetic spec; the split is keyed by
/// the spec seed so it is shared by every method and experiment seed.
inline Dataset make_synthetic_dataset(const SyntheticSpec& spec, std::string name = "synthetic")
{
    auto gen = generate_dataset(spec);
    Dataset ds{std::move(name), std::move(gen.ids), std::move(gen.images), std::move(gen.labels), gen.num_classes, {}};
    ds.split = split_dataset(ds.ids, spec.seed);
    return ds;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
        out << text;
        if (!out) throw Error(ErrorCode::IoFailure, "short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_dataset_dir(const std::filesystem::path& dir, const Dataset& ds,
                              const std::optional<SyntheticSpec>& spec = std::nullopt)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "labels");
    std::int64_t fg = 0, total = 0;
    for (std::size_t i = 0; i < ds.ids.size(); ++i) {
        write_volume(ds.images[i], dir / "images" / (ds.ids[i] + ".navol"));
        write_labels(ds.labels[i], dir / "labels" / (ds.ids[i] + ".navol"));
        total += ds.labels[i].labels.size();
        for (auto v : ds.labels[i].labels.values()) fg += v != 0;
    }
    nlohmann::ordered_json j;
    j["name"] = ds.name;
    j["ids"] = ds.ids;
    j["classes"] = ds.num_classes;
    j["split"] = {{"trainpool", ds.split.trainpool}, {"test", ds.split.test}};
    j["fg_fraction"] = total == 0 ? 0.0 : static_cast<double>(fg) / static_cast<double>(total);
    if (spec) j["spec"] = to_json(*spec);
    write_text_atomic(dir / "dataset.json", j.dump(2) + "\n");
}

inline Dataset load_dataset_dir(const std::filesystem::path& dir)
{
    const auto j = nlohmann::json::parse(read_text(dir / "dataset.json"));
    Dataset ds;
    ds.name = j.value("name", dir.filename().string());
    ds.ids = j.at("ids").get<std::vector<std::string>>();
    ds.num_classes = j.at("classes").get<int>();
    if (j.contains("split")) {
        ds.split.trainpool = j["split"].at("trainpool").get<std::vector<std::string>>();
        ds.split.test = j["split"].at("test").get<std::vector<std::string>>();
    } else {
        ds.split = split_dataset(ds.ids, 0);
    }
    for (const auto& id : ds.ids) {
        ds.images.push_back(read_image(dir / "images" / (id + ".navol")));
        auto labels = read_labels(dir / "labels" / (id + ".navol"));
        labels.validate(false);
        if (!(labels.shape() == ds.images.back().shape())) throw Error(ErrorCode::ShapeMismatch, "label shape differs for " + id);
        ds.labels.push_back(std::move(labels));
    }
    return ds;
}

}  // namespace patchal
