#pragma once

// Seeded active-learning loop runner: starting budget, then
// train -> predict -> score -> query -> annotate for each loop, with every
// query persisted as loop_XXX.json and the metric records in results.json.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchal/aggregate.hpp"
#include "patchal/dataset.hpp"
#include "patchal/metrics.hpp"
#include "patchal/query.hpp"
#include "patchal/simlab.hpp"
#include "patchal/uncertainty.hpp"

namespace patchal {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

struct LabelRegime {
    std::string name = "default";
    int total_budget_patches = 0;
    int query_size = 0;  // 0 -> 20% of the total budget
    int num_loops = 4;   // query loops after the starting budget

    [[nodiscard]] int effective_query_size() const
    {
        return query_size > 0 ? query_size : std::max(1, static_cast<int>(std::lround(0.2 * total_budget_patches)));
    }
    [[nodiscard]] int starting_budget() const { return total_budget_patches - num_loops * effective_query_size(); }
};

struct ExperimentConfig {
    std::optional<std::string> dataset_path;
    std::optional<SyntheticSpec> synthetic;
    std::string dataset_name;
    Method method = Method::Random;
    LabelRegime regime;
    Index3 patch_size{4, 8, 8};
    double overlap = 0.0;
    NoiseSpec noise;
    LearnerConfig learner;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3};
    std::string output_dir = "runs";
    bool reference_full = false;  // also train on the fully annotated pool for y_full

    void validate() const
    {
        if (dataset_path.has_value() == synthetic.has_value()) {
            throw Error(ErrorCode::InvalidArgument, "config needs exactly one of \"dataset\" or \"synthetic\"");
        }
        if (regime.total_budget_patches <= 0 || regime.num_loops < 0) {
            throw Error(ErrorCode::InvalidArgument, "label regime needs a positive total budget");
        }
        if (regime.starting_budget() <= 0) {
            throw Error(ErrorCode::InvalidArgument, "starting budget + num_loops * query_size must equal the total budget "
                                                    "with a positive starting budget");
        }
        if (overlap < 0.0 || overlap > 1.0) throw Error(ErrorCode::InvalidArgument, "overlap must be in [0,1]");
        for (auto s : patch_size)
            if (s <= 0) throw Error(ErrorCode::InvalidArgument, "patch size must be positive");
        noise.validate();
        learner.validate();
    }
};

inline ojson beta_to_json(double beta) { return std::isinf(beta) ? ojson("inf") : ojson(beta); }

inline double beta_from_json(const nlohmann::json& j)
{
    if (j.is_string() && (j.get<std::string>() == "inf" || j.get<std::string>() == "infinity")) {
        return std::numeric_limits<double>::infinity();
    }
    if (j.is_null()) return std::numeric_limits<double>::infinity();
    return j.get<double>();
}

inline std::string noise_kind_name(NoiseKind k)
{
    return k == NoiseKind::power ? "power" : k == NoiseKind::softrank ? "softrank" : "none";
}

inline NoiseKind parse_noise_kind(const std::string& s)
{
    if (s == "none") return NoiseKind::none;
    if (s == "power") return NoiseKind::power;
    if (s == "softrank") return NoiseKind::softrank;
    throw Error(ErrorCode::InvalidArgument, "unknown noise kind " + s);
}

inline ojson to_json(const LearnerConfig& c)
{
    return {{"ensemble_size", c.ensemble_size}, {"k", c.k},
            {"use_intensity", c.use_intensity}, {"use_smoothed", c.use_smoothed},
            {"use_coords", c.use_coords},       {"coord_weight", c.coord_weight},
            {"training_fraction", c.training_fraction}, {"bootstrap", c.bootstrap},
            {"index", c.index == KnnIndex::kdtree ? "kdtree" : "brute"}};
}

inline LearnerConfig learner_from_json(const nlohmann::json& j)
{
    LearnerConfig c;
    c.ensemble_size = j.value("ensemble_size", c.ensemble_size);
    c.k = j.value("k", c.k);
    c.use_intensity = j.value("use_intensity", c.use_intensity);
    c.use_smoothed = j.value("use_smoothed", c.use_smoothed);
    c.use_coords = j.value("use_coords", c.use_coords);
    c.coord_weight = j.value("coord_weight", c.coord_weight);
    c.training_fraction = j.value("training_fraction", c.training_fraction);
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    const auto index = j.value("index", std::string("brute"));
    if (index != "brute" && index != "kdtree") throw Error(ErrorCode::InvalidArgument, "learner index must be brute or kdtree");
    c.index = index == "kdtree" ? KnnIndex::kdtree : KnnIndex::brute;
    return c;
}

inline ojson to_json(const ExperimentConfig& c)
{
    ojson j;
    if (c.dataset_path) j["dataset"] = *c.dataset_path;
    if (c.synthetic) j["synthetic"] = to_json(*c.synthetic);
    j["dataset_name"] = c.dataset_name;
    j["method"] = method_name(c.method);
    j["label_regime"] = {{"name", c.regime.name},
                         {"total_budget_patches", c.regime.total_budget_patches},
                         {"query_size", c.regime.effective_query_size()},
                         {"num_loops", c.regime.num_loops}};
    j["patch_size"] = {c.patch_size[0], c.patch_size[1], c.patch_size[2]};
    j["overlap"] = c.overlap;
    j["noise"] = {{"kind", noise_kind_name(c.noise.kind)}, {"beta", beta_to_json(c.noise.beta)}};
    j["learner"] = to_json(c.learner);
    j["seeds"] = c.seeds;
    j["output_dir"] = c.output_dir;
    j["reference_full"] = c.reference_full;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j)
{
    ExperimentConfig c;
    if (j.contains("dataset")) c.dataset_path = j["dataset"].get<std::string>();
    if (j.contains("synthetic")) c.synthetic = synthetic_spec_from_json(j["synthetic"]);
    c.method = parse_method(j.at("method").get<std::string>());
    c.dataset_name = j.value("dataset_name", std::string());
    if (c.dataset_name.empty()) {
        c.dataset_name = c.dataset_path ? std::filesystem::path(*c.dataset_path).filename().string() : "synthetic";
    }
    const auto& r = j.at("label_regime");
    c.regime.name = r.value("name", c.regime.name);
    c.regime.total_budget_patches = r.at("total_budget_patches").get<int>();
    c.regime.query_size = r.value("query_size", 0);
    c.regime.num_loops = r.value("num_loops", c.regime.num_loops);
    if (j.contains("patch_size")) {
        const auto& p = j["patch_size"];
        c.patch_size = {p.at(0).get<std::int64_t>(), p.at(1).get<std::int64_t>(), p.at(2).get<std::int64_t>()};
    }
    c.overlap = j.value("overlap", 0.0);
    c.noise = default_noise(c.method);
    if (j.contains("noise")) {
        const auto& n = j["noise"];
        if (n.contains("kind")) c.noise.kind = parse_noise_kind(n["kind"].get<std::string>());
        if (n.contains("beta")) c.noise.beta = beta_from_json(n["beta"]);
    }
    if (j.contains("learner")) c.learner = learner_from_json(j["learner"]);
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    c.output_dir = j.value("output_dir", c.output_dir);
    c.reference_full = j.value("reference_full", false);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Manifests and records

inline std::string loop_file_name(int loop)
{
    std::ostringstream ss;
    ss << "loop_" << std::setw(3) << std::setfill('0') << loop << ".json";
    return ss.str();
}

inline ojson query_to_json(const Query& q)
{
    ojson j;
    j["loop"] = q.loop_index;
    j["method"] = method_name(q.method);
    j["seed"] = q.seed;
    ojson patches = ojson::array();
    for (const auto& c : q.patches) {
        patches.push_back({{"image", c.image_id},
                           {"origin", {c.box.origin[0], c.box.origin[1], c.box.origin[2]}},
                           {"size", {c.box.size[0], c.box.size[1], c.box.size[2]}},
                           {"score", q.scored ? ojson(c.score) : ojson(nullptr)}});
    }
    j["patches"] = std::move(patches);
    if (q.no_foreground_fallbacks > 0) j["no_foreground_fallbacks"] = q.no_foreground_fallbacks;
    return j;
}

struct ManifestPatch {
    std::string image;
    PatchBox box;
    std::optional<double> score;
};

inline std::vector<ManifestPatch> manifest_patches(const nlohmann::json& j)
{
    std::vector<ManifestPatch> out;
    for (const auto& p : j.at("patches")) {
        ManifestPatch mp;
        mp.image = p.at("image").get<std::string>();
        for (int k = 0; k < 3; ++k) {
            mp.box.origin[k] = p.at("origin").at(k).get<std::int64_t>();
            mp.box.size[k] = p.at("size").at(k).get<std::int64_t>();
        }
        if (!p.at("score").is_null()) mp.score = p["score"].get<double>();
        out.push_back(mp);
    }
    return out;
}

struct LoopRecord {
    int loop = 0;
    std::string manifest;
    int annotated_patches = 0;
    std::int64_t annotated_voxels = 0;
    std::int64_t fg_voxels_annotated = 0;
    double fg_fraction = 0.0;
    std::vector<std::pair<std::string, double>> per_image_dice;
    double mean_dice = 0.0;
};

inline ojson to_json(const LoopRecord& r)
{
    ojson per_image = ojson::object();
    for (const auto& [id, d] : r.per_image_dice) per_image[id] = d;
    return {{"loop", r.loop},
            {"manifest", r.manifest},
            {"annotated_patches", r.annotated_patches},
            {"annotated_voxels", r.annotated_voxels},
            {"fg_voxels_annotated", r.fg_voxels_annotated},
            {"fg_fraction", r.fg_fraction},
            {"per_image_dice", per_image},
            {"mean_dice", r.mean_dice}};
}

inline LoopRecord loop_record_from_json(const nlohmann::json& j)
{
    LoopRecord r;
    r.loop = j.at("loop").get<int>();
    r.manifest = j.value("manifest", std::string());
    r.annotated_patches = j.at("annotated_patches").get<int>();
    r.annotated_voxels = j.at("annotated_voxels").get<std::int64_t>();
    r.fg_voxels_annotated = j.at("fg_voxels_annotated").get<std::int64_t>();
    r.fg_fraction = j.at("fg_fraction").get<double>();
    for (const auto& [id, d] : j.at("per_image_dice").items()) r.per_image_dice.emplace_back(id, d.get<double>());
    r.mean_dice = j.at("mean_dice").get<double>();
    return r;
}

struct ExperimentResult {
    ojson config;
    std::string dataset;
    std::string regime;
    std::string method;
    std::uint64_t seed = 0;
    std::int64_t total_fg_voxels = 0;
    std::optional<double> full_dice;
    std::vector<LoopRecord> loops;
    std::filesystem::path directory;
};

inline ojson to_json(const ExperimentResult& r)
{
    ojson j;
    j["config"] = r.config;
    j["dataset"] = r.dataset;
    j["regime"] = r.regime;
    j["method"] = r.method;
    j["seed"] = r.seed;
    j["total_fg_voxels"] = r.total_fg_voxels;
    j["full_dice"] = r.full_dice ? ojson(*r.full_dice) : ojson(nullptr);
    ojson loops = ojson::array();
    for (const auto& l : r.loops) loops.push_back(to_json(l));
    j["loops"] = std::move(loops);
    return j;
}

inline ExperimentResult result_from_json(const nlohmann::json& j)
{
    ExperimentResult r;
    r.config = j.at("config");
    r.dataset = j.at("dataset").get<std::string>();
    r.regime = j.at("regime").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.total_fg_voxels = j.value("total_fg_voxels", std::int64_t{0});
    if (j.contains("full_dice") && !j["full_dice"].is_null()) r.full_dice = j["full_dice"].get<double>();
    for (const auto& l : j.at("loops")) r.loops.push_back(loop_record_from_json(l));
    return r;
}

// ---------------------------------------------------------------------------
// Running

inline Dataset load_experiment_dataset(const ExperimentConfig& cfg)
{
    if (cfg.synthetic) return make_synthetic_dataset(*cfg.synthetic, cfg.dataset_name);
    auto ds = load_dataset_dir(*cfg.dataset_path);
    ds.name = cfg.dataset_name;
    return ds;
}

inline std::filesystem::path run_directory(const ExperimentConfig& cfg, std::uint64_t seed)
{
    return std::filesystem::path(cfg.output_dir) / ("seed_" + std::to_string(seed));
}

namespace detail {

/// Working state of one experiment: the train/pool images, their masks and
/// ground truth, and the held-out test set.
struct LoopState {
    std::vector<std::string> pool_ids;
    std::vector<FloatVolume> pool_images;
    std::vector<LabelVolume> pool_labels;
    std::vector<AnnotationMask> masks;
    std::vector<std::string> test_ids;
    std::vector<FloatVolume> test_images;
    std::vector<LabelVolume> test_labels;
    int num_classes = 2;
    std::int64_t total_fg = 0;
    int annotated_patches = 0;

    std::size_t pool_index(const std::string& id) const
    {
        auto it = std::find(pool_ids.begin(), pool_ids.end(), id);
        if (it == pool_ids.end()) throw Error(ErrorCode::InvalidArgument, "patch targets non-pool image " + id);
        return static_cast<std::size_t>(it - pool_ids.begin());
    }

    void annotate(const Query& q)
    {
        for (const auto& c : q.patches) {
            auto& m = masks[pool_index(c.image_id)];
            m = union_annotation(m, c.box);
            ++annotated_patches;
        }
    }

    [[nodiscard]] std::int64_t annotated_voxels() const
    {
        std::int64_t n = 0;
        for (const auto& m : masks) n += m.annotated_voxels();
        return n;
    }

    [[nodiscard]] std::int64_t annotated_foreground() const
    {
        std::int64_t n = 0;
        for (std::size_t i = 0; i < masks.size(); ++i) {
            const auto mask = masks[i].voxel_mask();
            const auto lab = pool_labels[i].labels.values();
            for (std::size_t v = 0; v < mask.size(); ++v) n += (mask[v] && lab[v] != 0);
        }
        return n;
    }
};

inline LoopState make_state(const Dataset& ds)
{
    LoopState s;
    s.num_classes = ds.num_classes;
    for (const auto& id : ds.split.trainpool) {
        const auto i = ds.index_of(id);
        s.pool_ids.push_back(id);
        s.pool_images.push_back(ds.images[i]);
        s.pool_labels.push_back(ds.labels[i]);
        s.masks.emplace_back(id, ds.images[i].shape());
        for (auto v : ds.labels[i].labels.values()) s.total_fg += v != 0;
    }
    for (const auto& id : ds.split.test) {
        const auto i = ds.index_of(id);
        s.test_ids.push_back(id);
        s.test_images.push_back(ds.images[i]);
        s.test_labels.push_back(ds.labels[i]);
    }
    return s;
}

inline std::vector<std::pair<std::string, double>> evaluate_test(const TrainedModel& model, const LoopState& s)
{
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t i = 0; i < s.test_ids.size(); ++i) {
        const auto pred = predict_labels(model, s.test_images[i]);
        out.emplace_back(s.test_ids[i], dice_per_image(pred, s.test_labels[i], s.num_classes));
    }
    return out;
}

inline Query uncertainty_query(const ExperimentConfig& cfg, const TrainedModel& model, const LoopState& s, int n,
                               std::uint64_t seed, int loop)
{
    std::vector<std::vector<Candidate>> per_image;
    for (std::size_t i = 0; i < s.pool_ids.size(); ++i) {
        if (s.masks[i].saturated()) continue;
        const auto stack = predict_ensemble(model, s.pool_images[i]);
        const auto u = compute_uncertainty(uncertainty_of(cfg.method), stack, s.pool_ids[i]);
        const auto field = aggregate_mean(u.values, cfg.patch_size, s.pool_ids[i]);
        per_image.push_back(select_image_patches(field, s.masks[i], cfg.overlap, n));
    }
    auto rng = RngStream::keyed(seed, static_cast<std::uint64_t>(loop), StreamPurpose::Noise);
    return global_select(per_image, n, cfg.noise, rng);
}

}  // namespace detail

/// Runs one seed of an experiment and writes loop_XXX.json manifests and
/// results.json into <output_dir>/seed_<seed>/. Completed manifests are never
/// rewritten; results.json is replaced atomically after every loop.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed, bool overwrite = false)
{
    namespace fs = std::filesystem;
    cfg.validate();
    const auto dir = run_directory(cfg, seed);
    if (fs::exists(dir / loop_file_name(0))) {
        if (!overwrite) throw Error(ErrorCode::OutputExists, dir.string() + " already holds a run");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);

    const auto ds = load_experiment_dataset(cfg);
    auto state = detail::make_state(ds);
    const auto pool = [&] { return make_pool(state.masks); };
    const auto fg_index = ForegroundIndex::build(state.pool_labels);

    ExperimentResult result;
    result.config = to_json(cfg);
    result.dataset = cfg.dataset_name;
    result.regime = cfg.regime.name;
    result.method = method_name(cfg.method);
    result.seed = seed;
    result.total_fg_voxels = state.total_fg;
    result.directory = dir;

    if (cfg.reference_full) {
        std::vector<AnnotationMask> full;
        for (std::size_t i = 0; i < state.pool_ids.size(); ++i) {
            full.push_back(union_annotation(AnnotationMask(state.pool_ids[i], state.pool_images[i].shape()),
                                            PatchBox{{0, 0, 0}, state.pool_images[i].shape().extents()}));
        }
        const auto model = train(cfg.learner, state.pool_images, full, state.pool_labels, seed, 1000);
        const auto dice = detail::evaluate_test(model, state);
        std::vector<double> values;
        for (const auto& [_, d] : dice) values.push_back(d);
        result.full_dice = mean_of(values);
    }

    const int n = cfg.regime.effective_query_size();
    std::optional<TrainedModel> model;
    for (int loop = 0; loop <= cfg.regime.num_loops; ++loop) {
        Query q;
        if (loop == 0) {
            auto rng = RngStream::keyed(seed, 0, StreamPurpose::StartingBudget);
            const auto p = pool();
            q = starting_budget(p, state.pool_labels, fg_index, cfg.regime.starting_budget(), cfg.patch_size, cfg.overlap, rng);
        } else if (is_uncertainty_method(cfg.method)) {
            q = detail::uncertainty_query(cfg, *model, state, n, seed, loop);
        } else {
            auto rng = RngStream::keyed(seed, static_cast<std::uint64_t>(loop), StreamPurpose::Query);
            const auto p = pool();
            q = cfg.method == Method::Random
                    ? random_query(p, n, cfg.patch_size, cfg.overlap, rng)
                    : fg_aware_query(p, fg_index, n, cfg.patch_size, cfg.overlap, foreground_share(cfg.method), rng);
        }
        q.loop_index = loop;
        q.method = cfg.method;
        q.seed = seed;

        state.annotate(q);
        const auto manifest = loop_file_name(loop);
        write_text_atomic(dir / manifest, query_to_json(q).dump(2) + "\n");

        // Full retraining from scratch on the current annotation.
        model = train(cfg.learner, state.pool_images, state.masks, state.pool_labels, seed, static_cast<std::uint64_t>(loop));

        LoopRecord rec;
        rec.loop = loop;
        rec.manifest = manifest;
        rec.annotated_patches = state.annotated_patches;
        rec.annotated_voxels = state.annotated_voxels();
        rec.fg_voxels_annotated = state.annotated_foreground();
        rec.fg_fraction = state.total_fg == 0 ? 0.0
                                              : static_cast<double>(rec.fg_voxels_annotated) / static_cast<double>(state.total_fg);
        rec.per_image_dice = detail::evaluate_test(*model, state);
        std::vector<double> values;
        for (const auto& [_, d] : rec.per_image_dice) values.push_back(d);
        rec.mean_dice = mean_of(values);
        result.loops.push_back(std::move(rec));
        write_text_atomic(dir / "results.json", to_json(result).dump(2) + "\n");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation

inline std::vector<ExperimentResult> load_results(const std::vector<std::filesystem::path>& roots)
{
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    for (const auto& root : roots) {
        if (fs::is_regular_file(root)) {
            files.push_back(root);
        } else if (fs::is_directory(root)) {
            for (const auto& e : fs::recursive_directory_iterator(root))
                if (e.is_regular_file() && e.path().filename() == "results.json") files.push_back(e.path());
        } else {
            throw Error(ErrorCode::IoFailure, "no such run directory " + root.string());
        }
    }
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    std::vector<ExperimentResult> out;
    for (const auto& f : files) {
        auto r = result_from_json(nlohmann::json::parse(read_text(f)));
        r.directory = f.parent_path();
        out.push_back(std::move(r));
    }
    return out;
}

struct MethodSummary {
    std::string method;
    int seeds = 0;
    double aubc_mean = 0.0, aubc_std = 0.0;
    double final_mean = 0.0, final_std = 0.0;
    std::optional<double> fg_eff;  // pooled fit
    double fg_eff_std = 0.0;       // spread of per-seed fits
};

struct KendallEntry {
    std::string a, b;
    KendallResult result;
};

struct GroupReport {
    std::string dataset;
    std::string regime;
    double t0_hat = 0.0, y0_hat = 0.0, yfull_hat = 0.0;
    std::vector<MethodSummary> methods;
    std::map<std::string, std::vector<std::string>> rankings;  // metric -> methods, best first
    std::vector<KendallEntry> kendall;
};

struct Report {
    std::vector<GroupReport> groups;
    std::optional<PpmResult> ppm;
};

struct EvaluateOptions {
    std::optional<double> y_full;  // overrides recorded full-data Dice
    std::vector<std::pair<std::string, std::string>> kendall_pairs{{"aubc", "final"}, {"aubc", "fg_eff"}, {"final", "fg_eff"}};
    double alpha = 0.05;
};

namespace detail {

inline std::vector<std::string> rank_by(const std::vector<MethodSummary>& ms, const std::function<double(const MethodSummary&)>& key)
{
    std::vector<const MethodSummary*> order;
    for (const auto& m : ms) order.push_back(&m);
    std::stable_sort(order.begin(), order.end(), [&](const MethodSummary* a, const MethodSummary* b) {
        const double ka = key(*a), kb = key(*b);
        return ka != kb ? ka > kb : a->method < b->method;
    });
    std::vector<std::string> out;
    for (auto* m : order) out.push_back(m->method);
    return out;
}

}  // namespace detail

/// AUBC, Final Dice and FG-Eff per method and group (dataset, regime), the
/// pairwise penalty matrix over post-start budget cells, and Kendall's tau
/// between the metric rankings.
inline Report evaluate(const std::vector<ExperimentResult>& runs, const EvaluateOptions& opts = {})
{
    using Key = std::pair<std::string, std::string>;
    std::map<Key, std::map<std::string, std::vector<const ExperimentResult*>>> groups;
    for (const auto& r : runs) groups[{r.dataset, r.regime}][r.method].push_back(&r);
    if (groups.empty()) throw Error(ErrorCode::RaggedResults, "no results to evaluate");

    Report report;
    std::vector<PpmCell> cells;
    for (const auto& [key, by_method] : groups) {
        GroupReport g;
        g.dataset = key.first;
        g.regime = key.second;

        std::vector<double> t0s, y0s, fulls;
        double best_seen = 0.0;
        for (const auto& [_, rs] : by_method)
            for (const auto* r : rs) {
                if (r->loops.empty()) throw Error(ErrorCode::RaggedResults, "run without loops in " + r->directory.string());
                t0s.push_back(r->loops.front().fg_fraction);
                y0s.push_back(r->loops.front().mean_dice);
                if (r->full_dice) fulls.push_back(*r->full_dice);
                for (const auto& l : r->loops) best_seen = std::max(best_seen, l.mean_dice);
            }
        g.t0_hat = mean_of(t0s);
        g.y0_hat = mean_of(y0s);
        g.yfull_hat = opts.y_full ? *opts.y_full : (!fulls.empty() ? mean_of(fulls) : best_seen);

        std::size_t num_loops = 0;
        for (const auto& [method, rs] : by_method) {
            if (rs.size() < 2) throw Error(ErrorCode::RaggedResults, method + " has fewer than 2 seeds");
            MethodSummary ms;
            ms.method = method;
            ms.seeds = static_cast<int>(rs.size());
            std::vector<double> aubcs, finals, gammas;
            FgEffInput pooled{{}, g.t0_hat, g.y0_hat, g.yfull_hat};
            for (const auto* r : rs) {
                if (num_loops == 0) num_loops = r->loops.size();
                if (r->loops.size() != num_loops) throw Error(ErrorCode::RaggedResults, "runs differ in loop count");
                std::vector<BudgetPoint> curve;
                FgEffInput single{{}, g.t0_hat, g.y0_hat, g.yfull_hat};
                for (const auto& l : r->loops) {
                    curve.push_back({static_cast<double>(l.annotated_patches), l.mean_dice});
                    if (l.loop > 0) {
                        pooled.points.push_back({l.fg_fraction, l.mean_dice});
                        single.points.push_back({l.fg_fraction, l.mean_dice});
                    }
                }
                aubcs.push_back(curve.size() >= 2 ? aubc(curve) : curve.front().value);
                finals.push_back(r->loops.back().mean_dice);
                if (g.yfull_hat != g.y0_hat && !single.points.empty()) gammas.push_back(fit_fg_eff(single));
            }
            ms.aubc_mean = mean_of(aubcs);
            ms.aubc_std = stddev_of(aubcs);
            ms.final_mean = mean_of(finals);
            ms.final_std = stddev_of(finals);
            if (g.yfull_hat != g.y0_hat && !pooled.points.empty()) ms.fg_eff = fit_fg_eff(pooled);
            ms.fg_eff_std = stddev_of(gammas);
            g.methods.push_back(ms);
        }

        g.rankings["aubc"] = detail::rank_by(g.methods, [](const MethodSummary& m) { return m.aubc_mean; });
        g.rankings["final"] = detail::rank_by(g.methods, [](const MethodSummary& m) { return m.final_mean; });
        g.rankings["fg_eff"] = detail::rank_by(g.methods, [](const MethodSummary& m) {
            return m.fg_eff.value_or(-std::numeric_limits<double>::infinity());
        });
        if (g.methods.size() >= 2) {
            for (const auto& [a, b] : opts.kendall_pairs) {
                if (!g.rankings.contains(a) || !g.rankings.contains(b)) {
                    throw Error(ErrorCode::MismatchedItems, "unknown ranking column " + a + " or " + b);
                }
                g.kendall.push_back({a, b, kendall_tau(g.rankings[a], g.rankings[b])});
            }
        }

        for (std::size_t loop = 1; loop < num_loops; ++loop) {
            PpmCell cell;
            cell.label = g.dataset + "/" + g.regime + "/loop" + std::to_string(loop);
            for (const auto& [method, rs] : by_method)
                for (const auto* r : rs) cell.samples[method].push_back(r->loops[loop].mean_dice);
            cells.push_back(std::move(cell));
        }
        report.groups.push_back(std::move(g));
    }
    if (!cells.empty()) report.ppm = ppm(cells, opts.alpha);
    return report;
}

inline ojson to_json(const Report& rep)
{
    ojson j;
    ojson groups = ojson::array();
    for (const auto& g : rep.groups) {
        ojson gj;
        gj["dataset"] = g.dataset;
        gj["regime"] = g.regime;
        gj["fg_eff_fit"] = {{"t0_hat", g.t0_hat}, {"y0_hat", g.y0_hat}, {"yfull_hat", g.yfull_hat}};
        ojson ms = ojson::array();
        for (const auto& m : g.methods) {
            ms.push_back({{"method", m.method},
                          {"seeds", m.seeds},
                          {"aubc_mean", m.aubc_mean},
                          {"aubc_std", m.aubc_std},
                          {"final_dice_mean", m.final_mean},
                          {"final_dice_std", m.final_std},
                          {"fg_eff", m.fg_eff ? ojson(*m.fg_eff) : ojson(nullptr)},
                          {"fg_eff_std", m.fg_eff_std}});
        }
        gj["methods"] = std::move(ms);
        gj["rankings"] = g.rankings;
        ojson kj = ojson::array();
        for (const auto& k : g.kendall) kj.push_back({{"a", k.a}, {"b", k.b}, {"tau", k.result.tau}, {"p_value", k.result.p_value}});
        gj["kendall"] = std::move(kj);
        groups.push_back(std::move(gj));
    }
    j["groups"] = std::move(groups);
    if (rep.ppm) {
        j["ppm"] = {{"methods", rep.ppm->methods}, {"cells", rep.ppm->cells}, {"matrix", rep.ppm->matrix}, {"wins", rep.ppm->wins}};
    } else {
        j["ppm"] = nullptr;
    }
    return j;
}

inline std::string fixed(double v, int digits = 4)
{
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(digits) << v;
    return ss.str();
}

inline std::string report_markdown(const Report& rep)
{
    std::ostringstream md;
    for (const auto& g : rep.groups) {
        md << "## " << g.dataset << " / " << g.regime << "\n\n";
        md << "| Method | Seeds | AUBC | Final Dice | FG-Eff |\n|---|---|---|---|---|\n";
        for (const auto& m : g.methods) {
            md << "| " << m.method << " | " << m.seeds << " | " << fixed(m.aubc_mean) << " ± " << fixed(m.aubc_std) << " | "
               << fixed(m.final_mean) << " ± " << fixed(m.final_std) << " | "
               << (m.fg_eff ? fixed(*m.fg_eff, 3) + " ± " + fixed(m.fg_eff_std, 3) : std::string("n/a")) << " |\n";
        }
        md << "\nFG-Eff fit: t0 = " << fixed(g.t0_hat) << ", y(t0) = " << fixed(g.y0_hat) << ", y_full = " << fixed(g.yfull_hat)
           << "\n";
        for (const auto& k : g.kendall) {
            md << "\nKendall tau(" << k.a << ", " << k.b << ") = " << fixed(k.result.tau, 3) << " (p = " << fixed(k.result.p_value, 3)
               << ")";
        }
        md << "\n\n";
    }
    if (rep.ppm) {
        const auto& p = *rep.ppm;
        md << "## Pairwise penalty matrix (" << p.cells << " cells)\n\n| |";
        for (const auto& m : p.methods) md << " " << m << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < p.methods.size(); ++i) md << "---|";
        md << "\n";
        for (std::size_t i = 0; i < p.methods.size(); ++i) {
            md << "| " << p.methods[i] << " |";
            for (std::size_t j = 0; j < p.methods.size(); ++j) md << " " << fixed(p.matrix[i][j], 2) << " |";
            md << "\n";
        }
        md << "\n| Method | Wins | Losses |\n|---|---|---|\n";
        for (std::size_t i = 0; i < p.methods.size(); ++i) {
            int w = 0, l = 0;
            for (std::size_t j = 0; j < p.methods.size(); ++j) {
                w += p.wins[i][j];
                l += p.wins[j][i];
            }
            md << "| " << p.methods[i] << " | " << w << " | " << l << " |\n";
        }
    }
    return md.str();
}

/// Flat per-loop table: method,dataset,regime,seed,loop,budget_patches,fg_voxels_annotated,mean_dice
inline std::string results_csv(const std::vector<ExperimentResult>& runs)
{
    std::ostringstream csv;
    csv << "method,dataset,regime,seed,loop,budget_patches,fg_voxels_annotated,mean_dice\n";
    csv << std::setprecision(17);
    for (const auto& r : runs)
        for (const auto& l : r.loops) {
            csv << r.method << ',' << r.dataset << ',' << r.regime << ',' << r.seed << ',' << l.loop << ','
                << l.annotated_patches << ',' << l.fg_voxels_annotated << ',' << l.mean_dice << '\n';
        }
    return csv.str();
}

}  // namespace patchal
