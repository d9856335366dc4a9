// Small end-to-end run: a synthetic dataset, three query strategies, two
// seeds each, then the evaluation report printed as Markdown.
//
//   quickstart [output_dir]

#include <filesystem>
#include <iostream>

#include "patchal/orchestrator.hpp"

using namespace patchal;

int main(int argc, char** argv)
{
    const std::filesystem::path out = argc > 1 ? argv[1] : "quickstart_runs";

    SyntheticSpec data;
    data.num_images = 12;
    data.shape = {24, 24, 24};
    data.num_classes = 3;
    data.shapes_max = 2;
    data.fg_fraction_target = 0.02;
    data.seed = 1;

    ExperimentConfig cfg;
    cfg.synthetic = data;
    cfg.dataset_name = "toy";
    cfg.regime = {"low", 20, 4, 3};  // 8 starting patches, then 3 queries of 4
    cfg.patch_size = {4, 6, 6};
    cfg.learner.use_coords = false;
    cfg.learner.index = KnnIndex::kdtree;
    cfg.seeds = {0, 1};

    std::vector<ExperimentResult> runs;
    for (auto method : {Method::Random, Method::Random66FG, Method::PowerBALD}) {
        cfg.method = method;
        cfg.noise = default_noise(method);
        cfg.output_dir = (out / method_name(method)).string();
        for (auto seed : cfg.seeds) {
            runs.push_back(run_experiment(cfg, seed, /*overwrite=*/true));
            std::cout << method_name(method) << " seed " << seed << ": final Dice "
                      << fixed(runs.back().loops.back().mean_dice) << "\n";
        }
    }

    std::cout << "\n" << report_markdown(evaluate(runs));
    return 0;
}
