#include <fmt/format.h>

#include <filesystem>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "courier/error.hpp"
#include "courier/pipeline/stages.hpp"

namespace fs = std::filesystem;
namespace cp = courier::pipeline;

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const courier::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const courier::MissingInputError*>(&e)) return 3;
  if (dynamic_cast<const courier::MissingArtifactError*>(&e)) return 4;
  if (dynamic_cast<const courier::NumericError*>(&e)) return 5;
  return 1;
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Courier pre-training pipeline: data, pre-training, clustering, CTR and ablations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", cp::kToolVersion);

  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> image_mode;
  std::optional<std::size_t> k;
  std::string data, embeddings, clusters, model, train_log, grid;
  bool oracle = false;
  cp::RunOptions opts;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Pipeline config (JSON)")->required();
    sub->add_option("--out", out, "Output directory")->required();
    sub->add_option("--seed", seed, "Override the master seed");
    sub->add_flag("--force", opts.force, "Re-run even when outputs are current");
    sub->add_flag("--quiet", opts.quiet, "No progress output");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic catalog and sessions");
  common(gen);

  auto* pre = app.add_subcommand("pretrain", "Pre-train the item encoder");
  common(pre);
  pre->add_option("--data", data, "Dataset directory")->required();
  pre->add_option("--variant", variant, "full, no_ucs, no_contrast, no_reconstruction, no_neg_pv, small_batch");
  pre->add_flag("--resume", opts.resume, "Continue from the checkpoint in --out");

  auto* clu = app.add_subcommand("cluster", "Cluster exported embeddings");
  common(clu);
  clu->add_option("--embeddings", embeddings, "Embedding TSV")->required();
  clu->add_option("--k", k, "Number of clusters (overrides cluster.k)");
  clu->add_option("--data", data, "Dataset directory, for the shared-characteristic report");

  auto* ctr = app.add_subcommand("ctr-train", "Train the downstream CTR model");
  common(ctr);
  auto* ev = app.add_subcommand("eval", "Score the test split and write report.json");
  common(ev);
  for (CLI::App* sub : {ctr, ev}) {
    sub->add_option("--data", data, "Dataset directory")->required();
    sub->add_option("--image-mode", image_mode, "none, vector, simscore, clusterid");
    sub->add_option("--embeddings", embeddings, "Embedding TSV (vector and simscore modes)");
    sub->add_option("--clusters", clusters, "Cluster map TSV (clusterid mode)");
  }
  ev->add_option("--model", model, "Trained CTR model");
  ev->add_option("--train-log", train_log, "Pre-training log; adds alignment and uniformity");
  ev->add_flag("--oracle", oracle, "Score with the true labels");

  auto* abl = app.add_subcommand("ablate", "Run an experiment grid and tabulate deltas");
  common(abl);
  abl->add_option("--grid", grid, "Grid JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    cp::PipelineConfig config = cp::load_config(config_path);
    if (seed) config.seed = *seed;
    if (variant) config.pretrain.variant = courier::model::parse_variant(*variant);
    if (image_mode) config.ctr.mode = courier::quant::parse_image_mode(*image_mode);
    if (k) config.cluster.k = *k;
    config.pretrain.validate();
    config.ctr.validate();

    const cp::CtrInputs inputs{data, opt_path(embeddings), opt_path(clusters)};
    if (*gen) {
      cp::gen_data(config, out, opts);
    } else if (*pre) {
      cp::pretrain(config, data, out, opts);
    } else if (*clu) {
      cp::cluster(config, embeddings, out, opt_path(data), opts);
    } else if (*ctr) {
      cp::ctr_train(config, inputs, out, opts);
    } else if (*ev) {
      cp::eval(config, inputs, opt_path(model), out, oracle, opt_path(train_log), opts);
      const auto report = cp::read_report(fs::path(out) / cp::files::kReport);
      fmt::print("auc {:.6f}  gauc {:.6f}  ndcg@10 {:.6f}  sessions {}\n", report.auc, report.gauc,
                 report.ndcg10, report.n_sessions);
    } else if (*abl) {
      const cp::AblationResult result = cp::ablate(config, cp::load_grid(grid, config.seed), out, opts);
      fmt::print("{}", cp::format_ablation_table(result));
      if (!result.all_ok()) return 1;
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return exit_code_for(e);
  }
  return 0;
}
