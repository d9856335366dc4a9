// Command-line front end:
//   patchal gen-data --spec spec.json --out DIR
//   patchal run      --config cfg.json [--seed N] [--overwrite]
//   patchal eval     --runs DIR... --out report/ [--y-full X] [--kendall a:b ...]
//   patchal report   --runs DIR... --format csv|json|md

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patchal/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace patchal;

namespace {

int gen_data(const std::string& spec_path, const std::string& out)
{
    const auto j = nlohmann::json::parse(read_text(spec_path));
    const auto spec = synthetic_spec_from_json(j);
    const auto name = j.value("name", fs::path(out).filename().string());
    const auto ds = make_synthetic_dataset(spec, name);
    write_dataset_dir(out, ds, spec);

    std::int64_t fg = 0, total = 0;
    for (const auto& l : ds.labels) {
        total += l.labels.size();
        for (auto v : l.labels.values()) fg += v != 0;
    }
    std::cout << "wrote " << ds.ids.size() << " images to " << out << " (foreground fraction "
              << fixed(static_cast<double>(fg) / static_cast<double>(total), 4) << ", target "
              << fixed(spec.fg_fraction_target, 4) << ")\n";
    return 0;
}

int run(const std::string& config_path, std::optional<std::uint64_t> seed, bool overwrite)
{
    const auto cfg = config_from_json(nlohmann::json::parse(read_text(config_path)));
    std::vector<std::uint64_t> seeds = seed ? std::vector<std::uint64_t>{*seed} : cfg.seeds;
    for (auto s : seeds) {
        const auto start = std::chrono::steady_clock::now();
        const auto res = run_experiment(cfg, s, overwrite);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << method_name(cfg.method) << " seed " << s << ": final Dice " << fixed(res.loops.back().mean_dice)
                  << " after " << res.loops.back().annotated_patches << " patches (" << fixed(secs, 1) << " s) -> "
                  << res.directory.string() << "\n";
    }
    return 0;
}

EvaluateOptions eval_options(std::optional<double> y_full, const std::vector<std::string>& kendall)
{
    EvaluateOptions opts;
    opts.y_full = y_full;
    if (!kendall.empty()) {
        opts.kendall_pairs.clear();
        for (const auto& k : kendall) {
            const auto colon = k.find(':');
            if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--kendall expects a:b, got " + k);
            opts.kendall_pairs.emplace_back(k.substr(0, colon), k.substr(colon + 1));
        }
    }
    return opts;
}

std::vector<fs::path> to_paths(const std::vector<std::string>& dirs) { return {dirs.begin(), dirs.end()}; }

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Patch-based active learning on 3D volumes"};
    app.require_subcommand(1);

    std::string spec_path, out_dir;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
    gen->add_option("--spec", spec_path, "Synthetic dataset spec (JSON)")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", out_dir, "Output dataset directory")->required();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool overwrite = false;
    auto* run_cmd = app.add_subcommand("run", "Run an active-learning experiment");
    run_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("--seed", seed, "Run only this seed (default: every seed in the config)");
    run_cmd->add_flag("--overwrite", overwrite, "Replace an existing run directory");

    std::vector<std::string> runs;
    std::optional<double> y_full;
    std::vector<std::string> kendall;
    std::string report_dir;
    auto* eval = app.add_subcommand("eval", "Evaluate runs and write a report directory");
    eval->add_option("--runs", runs, "Run directories (searched for results.json)")->required();
    eval->add_option("--out", report_dir, "Report directory")->required();
    eval->add_option("--y-full", y_full, "Full-data Dice used by the FG-Eff fit");
    eval->add_option("--kendall", kendall, "Ranking pairs for Kendall's tau, e.g. aubc:final");

    std::string format = "md";
    auto* rep = app.add_subcommand("report", "Print run results");
    rep->add_option("--runs", runs, "Run directories (searched for results.json)")->required();
    rep->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json", "md"}));
    rep->add_option("--y-full", y_full, "Full-data Dice used by the FG-Eff fit");
    rep->add_option("--kendall", kendall, "Ranking pairs for Kendall's tau, e.g. aubc:final");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return gen_data(spec_path, out_dir);
        if (run_cmd->parsed()) return run(config_path, seed, overwrite);
        if (eval->parsed()) {
            const auto results = load_results(to_paths(runs));
            const auto report = evaluate(results, eval_options(y_full, kendall));
            fs::create_directories(report_dir);
            write_text_atomic(fs::path(report_dir) / "report.json", to_json(report).dump(2) + "\n");
            write_text_atomic(fs::path(report_dir) / "report.md", report_markdown(report));
            write_text_atomic(fs::path(report_dir) / "results.csv", results_csv(results));
            std::cout << report_markdown(report);
            return 0;
        }
        if (rep->parsed()) {
            const auto results = load_results(to_paths(runs));
            if (format == "csv") {
                std::cout << results_csv(results);
            } else {
                const auto report = evaluate(results, eval_options(y_full, kendall));
                std::cout << (format == "json" ? to_json(report).dump(2) + "\n" : report_markdown(report));
            }
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
