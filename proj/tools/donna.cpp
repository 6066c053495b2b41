// Command-line front end: one subcommand per pipeline stage plus the cost
// ledger. Stages check their upstream manifests, so running them out of
// order reports which stage to run first.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "donna/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"desk-scale architecture search: blockwise distillation, "
               "accuracy prediction, evolutionary Pareto search"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "pipeline configuration file")
      ->required();
  std::int64_t seed = -1;
  app.add_option("--seed", seed, "override the configured seed");
  int workers = 0;
  app.add_option("--workers", workers, "override the configured worker count");
  std::string out_dir;
  app.add_option("--out", out_dir, "override the configured output directory");

  app.add_subcommand("gen-data", "generate the train and held-out splits");
  app.add_subcommand("train-ref", "train the reference model");
  app.add_subcommand("bkd", "distill every block choice into the library");
  app.add_subcommand("sample", "draw the train/holdout architecture samples");
  app.add_subcommand("finetune-lib", "finetune the sampled architectures");
  app.add_subcommand("fit-predictor", "fit the accuracy predictor");
  app.add_subcommand("eval-predictor", "score the predictor on held-out genomes");
  app.add_subcommand("search", "run the Pareto search per cost model");
  app.add_subcommand("finetune-optima", "finetune selected Pareto points");
  app.add_subcommand("explore", "search constrained space variants");
  app.add_subcommand("report", "emit the comparison CSV and cost ledger");
  app.add_subcommand("cost-ledger", "print the epoch accounting");

  CLI11_PARSE(app, argc, argv);

  try {
    donna::PipelineOverrides ov;
    if (!out_dir.empty()) ov.out = out_dir;
    if (seed >= 0) ov.seed = static_cast<std::uint64_t>(seed);
    if (workers > 0) ov.workers = workers;
    donna::PipelineConfig cfg = donna::load_pipeline_config(config_path, ov);
    donna::Pipeline pipeline(std::move(cfg), [](const std::string& msg) {
      std::cout << msg << std::endl;
    });

    const std::string stage = app.get_subcommands().front()->get_name();
    if (stage == "cost-ledger") {
      std::cout << pipeline.ledger_text();
    } else {
      pipeline.run_stage(stage);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
