#include "courier/pipeline/stages.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "courier/common/codec.hpp"
#include "courier/downstream/ctr.hpp"
#include "courier/error.hpp"
#include "courier/synthgen/io.hpp"
#include "courier/trainer/trainer.hpp"

namespace courier::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void note(const RunOptions& opts, const std::string& msg) {
  if (!opts.quiet) fmt::print(stderr, "{}\n", msg);
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("missing artifact: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
  }
}

// Shared skeleton: digest inputs, skip when current, otherwise run `body`
// (which returns the names of the files it wrote) and record the manifest.
template <typename Body>
StageOutcome run_stage(const std::string& stage, const json& hashed, std::uint64_t seed,
                       const std::map<std::string, fs::path>& input_paths, const fs::path& out,
                       const RunOptions& opts, Body&& body) {
  const auto inputs = digest_inputs(input_paths);
  const std::string hash = json_hash({{"stage", stage}, {"config", hashed}});
  if (!opts.force && !opts.resume && up_to_date(out, stage, hash, seed, inputs)) {
    StageOutcome outcome{true, {}};
    read_manifest(out, outcome.manifest);
    note(opts, fmt::format("[{}] up to date in {}", stage, out.string()));
    return outcome;
  }
  fs::create_directories(out);
  fs::remove(out / kManifestName);

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::string> produced = body();
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Manifest m{stage, hash, seed, inputs, {}, wall, kToolVersion};
  for (const std::string& name : produced) m.outputs[name] = sha256_file(out / name);
  write_manifest(m, out);
  note(opts, fmt::format("[{}] wrote {} in {:.1f}s", stage, out.string(), wall));
  return {false, std::move(m)};
}

std::map<std::string, fs::path> dataset_inputs(const fs::path& data_dir, bool with_train, bool with_test) {
  std::map<std::string, fs::path> in{{"catalog", data_dir / files::kCatalog}};
  if (with_train) in["train"] = data_dir / files::kTrain;
  if (with_test) in["test"] = data_dir / files::kTest;
  for (const auto& [role, path] : in) {
    if (!fs::exists(path)) throw MissingInputError(fmt::format("missing {} data file: {}", role, path.string()));
  }
  return in;
}

std::size_t feature_dim(const synth::Catalog& catalog) {
  if (catalog.items.empty()) throw DataError("catalog is empty");
  return catalog.items.front().features.size();
}

// Owns whatever image inputs the mode needs.
struct LoadedResources {
  std::optional<diff::Tensor> embeddings;
  std::optional<std::vector<std::int64_t>> clusters;
  std::size_t num_clusters = 0;

  downstream::ImageResources view() const {
    downstream::ImageResources r;
    if (embeddings) r.embeddings = &*embeddings;
    if (clusters) r.clusters = &*clusters;
    r.num_clusters = num_clusters;
    return r;
  }
};

void require_artifact(const std::optional<fs::path>& path, const char* what, quant::ImageMode mode) {
  if (!path) {
    throw MissingArtifactError(
        fmt::format("image mode {} needs a {} but none was given", quant::to_string(mode), what));
  }
  if (!fs::exists(*path)) {
    throw MissingArtifactError(fmt::format("missing artifact: {} {} (needed by image mode {})", what,
                                           path->string(), quant::to_string(mode)));
  }
}

LoadedResources load_resources(const PipelineConfig& config, const CtrInputs& inputs,
                               std::map<std::string, fs::path>& input_paths) {
  LoadedResources res;
  const quant::ImageMode mode = config.ctr.mode;
  if (mode == quant::ImageMode::vector || mode == quant::ImageMode::simscore) {
    require_artifact(inputs.embeddings, "embedding table", mode);
    input_paths["embeddings"] = *inputs.embeddings;
    res.embeddings = train::read_embeddings_tsv(*inputs.embeddings);
  } else if (mode == quant::ImageMode::clusterid) {
    require_artifact(inputs.clusters, "cluster map", mode);
    input_paths["clusters"] = *inputs.clusters;
    res.clusters = quant::read_cluster_map(*inputs.clusters);
    std::int64_t max_id = -1;
    for (std::int64_t c : *res.clusters) max_id = std::max(max_id, c);
    res.num_clusters = std::max<std::size_t>(config.cluster.k, static_cast<std::size_t>(max_id + 1));
  }
  return res;
}

}  // namespace

StageOutcome gen_data(const PipelineConfig& config, const fs::path& out, const RunOptions& opts) {
  return run_stage("gen-data", dataset_config_to_json(config.data), config.seed, {}, out, opts, [&] {
    const synth::DatasetSplit split = synth::build_dataset(config.data, config.seed);
    synth::write_catalog(split.catalog, out / files::kCatalog);
    synth::write_sessions(split.train, out / files::kTrain);
    synth::write_sessions(split.test, out / files::kTest);
    return std::vector<std::string>{files::kCatalog, files::kTrain, files::kTest};
  });
}

StageOutcome pretrain(const PipelineConfig& config, const fs::path& data_dir, const fs::path& out,
                      const RunOptions& opts) {
  const auto inputs = dataset_inputs(data_dir, true, false);
  const json hashed = train::pretrain_config_to_json(config.pretrain);
  return run_stage("pretrain", hashed, config.seed, inputs, out, opts, [&] {
    const synth::Catalog catalog = synth::read_catalog(inputs.at("catalog"));
    const std::vector<synth::Session> sessions = synth::read_sessions(inputs.at("train"));

    train::Checkpoint ck;
    train::TrainLog log;
    const fs::path ck_path = out / files::kCheckpoint;
    if (opts.resume && fs::exists(ck_path)) {
      ck = train::load_checkpoint(ck_path);
      json saved = train::pretrain_config_to_json(ck.config);
      json wanted = hashed;
      saved.erase("epochs");
      wanted.erase("epochs");
      if (saved != wanted || ck.seed != config.seed) {
        throw ConfigError("cannot resume: checkpoint was trained with a different config or seed");
      }
      if (ck.epochs_done > config.pretrain.epochs) {
        throw ConfigError(fmt::format("cannot resume: checkpoint has {} epochs, config asks for {}",
                                      ck.epochs_done, config.pretrain.epochs));
      }
      ck.config.epochs = config.pretrain.epochs;
      if (fs::exists(out / files::kTrainLog)) log = train::read_train_log(out / files::kTrainLog);
      note(opts, fmt::format("[pretrain] resuming at epoch {}", ck.epochs_done));
    } else {
      ck = train::init_checkpoint(feature_dim(catalog), config.pretrain, config.seed);
    }
    train::train_epochs(ck, catalog, sessions, log);

    train::save_checkpoint(ck, ck_path);
    train::write_train_log(log, out / files::kTrainLog);
    train::write_embeddings_tsv(train::export_embeddings(ck, catalog), out / files::kEmbeddings);
    return std::vector<std::string>{files::kCheckpoint, files::kTrainLog, files::kEmbeddings};
  });
}

StageOutcome cluster(const PipelineConfig& config, const fs::path& embeddings, const fs::path& out,
                     const std::optional<fs::path>& data_dir, const RunOptions& opts) {
  std::map<std::string, fs::path> inputs{{"embeddings", embeddings}};
  if (data_dir) inputs.merge(dataset_inputs(*data_dir, false, false));
  return run_stage("cluster", kmeans_config_to_json(config.cluster), config.seed, inputs, out, opts, [&] {
    const diff::Tensor table = train::read_embeddings_tsv(embeddings);
    const quant::ClusterModel model = quant::fit_clusters(table, config.cluster, config.seed);
    quant::write_cluster_map(model.assignments, out / files::kClusters);
    quant::write_centers(model.centers, out / files::kCenters);

    json report = {{"k", model.k},
                   {"num_items", table.rows()},
                   {"inertia", model.inertia},
                   {"iterations", model.inertia_history.empty() ? 0 : model.inertia_history.size() - 1},
                   {"normalized", model.normalized}};
    if (data_dir) {
      const synth::Catalog catalog = synth::read_catalog(inputs.at("catalog"));
      report["shared_char_ratio"] = quant::shared_char_cluster_ratio(catalog, model.assignments);
    }
    write_json(report, out / files::kClusterReport);
    return std::vector<std::string>{files::kClusters, files::kCenters, files::kClusterReport};
  });
}

StageOutcome ctr_train(const PipelineConfig& config, const CtrInputs& inputs, const fs::path& out,
                       const RunOptions& opts) {
  auto paths = dataset_inputs(inputs.data_dir, true, false);
  const LoadedResources res = load_resources(config, inputs, paths);
  return run_stage("ctr-train", downstream::ctr_config_to_json(config.ctr), config.seed, paths, out, opts, [&] {
    const synth::Catalog catalog = synth::read_catalog(paths.at("catalog"));
    const std::vector<synth::Session> sessions = synth::read_sessions(paths.at("train"));
    downstream::CtrModel model(config.ctr, catalog.items.size(), res.view(), config.seed);
    const downstream::CtrTrainLog log = downstream::train_ctr(model, sessions, res.view(), config.seed);

    write_json(downstream::ctr_model_to_json(model), out / files::kCtrModel);
    std::ofstream tsv(out / files::kCtrLog);
    tsv << "epoch\tloss\n";
    for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) tsv << fmt::format("{}\t{:.17g}\n", e + 1, log.epoch_loss[e]);
    tsv.close();
    return std::vector<std::string>{files::kCtrModel, files::kCtrLog};
  });
}

StageOutcome eval(const PipelineConfig& config, const CtrInputs& inputs, const std::optional<fs::path>& model_path,
                  const fs::path& out, bool oracle, const std::optional<fs::path>& train_log,
                  const RunOptions& opts) {
  auto paths = dataset_inputs(inputs.data_dir, false, true);
  LoadedResources res;
  if (!oracle) {
    if (!model_path) throw MissingArtifactError("eval needs a trained CTR model (or --oracle)");
    if (!fs::exists(*model_path)) throw MissingArtifactError("missing artifact: CTR model " + model_path->string());
    paths["model"] = *model_path;
    const quant::ImageMode trained = downstream::ctr_model_from_json(read_json(*model_path)).config().mode;
    if (trained != config.ctr.mode) {
      throw ConfigError(fmt::format("model was trained with image mode {} but the run asks for {}",
                                    quant::to_string(trained), quant::to_string(config.ctr.mode)));
    }
    res = load_resources(config, inputs, paths);
  }
  if (train_log) paths["train_log"] = *train_log;

  const json hashed = {{"mode", quant::to_string(config.ctr.mode)}, {"oracle", oracle}};
  return run_stage("eval", hashed, config.seed, paths, out, opts, [&] {
    const std::vector<synth::Session> test = synth::read_sessions(paths.at("test"));
    std::vector<downstream::ScoredGroup> groups;
    if (oracle) {
      for (const synth::Session& s : test) {
        downstream::ScoredGroup g;
        for (std::size_t j = 0; j < s.pv_items.size(); ++j) {
          if (!s.pv_mask[j]) continue;
          g.scores.push_back(s.labels[j]);
          g.labels.push_back(s.labels[j]);
        }
        groups.push_back(std::move(g));
      }
    } else {
      const downstream::CtrModel model = downstream::ctr_model_from_json(read_json(*model_path));
      groups = model.score(test, res.view());
    }

    downstream::MetricsReport report = downstream::evaluate_groups(groups);
    report.mode = oracle ? "oracle" : std::string(quant::to_string(config.ctr.mode));
    report.seed = config.seed;
    report.config_hash = json_hash(config_to_json(config));
    if (train_log) {
      const train::TrainLog log = train::read_train_log(*train_log);
      if (!log.epochs.empty()) {
        report.alignment = log.epochs.back().alignment;
        report.uniformity = log.epochs.back().uniformity;
      }
    }
    write_json(downstream::report_to_json(report), out / files::kReport);
    return std::vector<std::string>{files::kReport};
  });
}

downstream::MetricsReport read_report(const fs::path& path) { return downstream::report_from_json(read_json(path)); }

// ---- ablation grid ----

namespace {

GridCell parse_cell(const json& j, std::uint64_t default_seed) {
  if (!j.is_object()) throw ConfigError("grid cells must be objects");
  GridCell c;
  c.seed = default_seed;
  try {
    if (j.contains("variant")) c.variant = model::parse_variant(j.at("variant").get<std::string>());
    if (j.contains("image_mode")) c.mode = quant::parse_image_mode(j.at("image_mode").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw ConfigError("grid cell has a field of the wrong type");
  }
  return c;
}

std::string cell_label(const GridCell& c) {
  return fmt::format("{}/{}/s{}", model::to_string(c.variant), quant::to_string(c.mode), c.seed);
}

}  // namespace

ExperimentGrid parse_grid(const json& j, std::uint64_t default_seed) {
  if (!j.is_object() || !j.contains("cells") || !j.at("cells").is_array()) {
    throw ConfigError("missing required grid key 'cells'");
  }
  ExperimentGrid grid;
  for (const json& cell : j.at("cells")) grid.cells.push_back(parse_cell(cell, default_seed));
  if (grid.cells.empty()) throw ConfigError("grid has no cells");
  if (j.contains("baseline")) {
    const GridCell base = parse_cell(j.at("baseline"), default_seed);
    auto it = std::find(grid.cells.begin(), grid.cells.end(), base);
    if (it == grid.cells.end()) throw ConfigError("grid baseline " + cell_label(base) + " is not one of its cells");
    grid.baseline = static_cast<std::size_t>(it - grid.cells.begin());
  }
  return grid;
}

ExperimentGrid load_grid(const fs::path& path, std::uint64_t default_seed) {
  std::ifstream in(path);
  if (!in) throw ConfigError("grid file not found: " + path.string());
  try {
    return parse_grid(json::parse(in), default_seed);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("grid {} is not valid JSON: {}", path.string(), e.what()));
  }
}

CellDirs cell_dirs(const GridCell& cell, const fs::path& out) {
  const std::string v(model::to_string(cell.variant));
  const std::string tag = cell.mode == quant::ImageMode::none
                              ? fmt::format("none_s{}", cell.seed)
                              : fmt::format("{}_{}_s{}", v, quant::to_string(cell.mode), cell.seed);
  return {out / fmt::format("data_s{}", cell.seed), out / fmt::format("pretrain_{}_s{}", v, cell.seed),
          out / fmt::format("cluster_{}_s{}", v, cell.seed), out / ("ctr_" + tag), out / ("eval_" + tag)};
}

bool AblationResult::all_ok() const {
  return std::all_of(rows.begin(), rows.end(), [](const AblationRow& r) { return r.ok; });
}

namespace {

AblationRow run_cell(const PipelineConfig& base, const GridCell& cell, const fs::path& out, const RunOptions& opts) {
  AblationRow row;
  row.cell = cell;
  PipelineConfig config = base;
  config.seed = cell.seed;
  config.pretrain.variant = cell.variant;
  config.ctr.mode = cell.mode;

  RunOptions stage_opts = opts;
  stage_opts.resume = false;
  const CellDirs dirs = cell_dirs(cell, out);
  try {
    bool reused = gen_data(config, dirs.data, stage_opts).skipped;
    CtrInputs inputs{dirs.data, std::nullopt, std::nullopt};
    std::optional<fs::path> log;
    if (cell.mode != quant::ImageMode::none) {
      reused &= pretrain(config, dirs.data, dirs.pretrain, stage_opts).skipped;
      inputs.embeddings = dirs.pretrain / files::kEmbeddings;
      log = dirs.pretrain / files::kTrainLog;
      if (cell.mode == quant::ImageMode::clusterid) {
        reused &= cluster(config, *inputs.embeddings, dirs.cluster, dirs.data, stage_opts).skipped;
        inputs.clusters = dirs.cluster / files::kClusters;
      }
    }
    reused &= ctr_train(config, inputs, dirs.ctr, stage_opts).skipped;
    reused &= eval(config, inputs, dirs.ctr / files::kCtrModel, dirs.eval, false, log, stage_opts).skipped;
    row.report = read_report(dirs.eval / files::kReport);
    row.reused = reused;
    row.ok = true;
  } catch (const std::exception& e) {
    row.error = e.what();
    note(opts, fmt::format("[ablate] cell {} FAILED: {}", cell_label(cell), row.error));
  }
  return row;
}

std::string fmt_num(double x) { return std::isnan(x) ? "nan" : fmt::format("{:.17g}", x); }

json num_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::string pct(double delta, double base) {
  if (std::isnan(delta) || base == 0.0) return "-";
  return fmt::format("{:+.2f}%", 100.0 * delta / base);
}

}  // namespace

AblationResult ablate(const PipelineConfig& config, const ExperimentGrid& grid, const fs::path& out,
                      const RunOptions& opts) {
  if (grid.baseline >= grid.cells.size()) throw ConfigError("grid baseline index out of range");
  fs::create_directories(out);
  AblationResult result;
  result.baseline = grid.baseline;
  for (const GridCell& cell : grid.cells) result.rows.push_back(run_cell(config, cell, out, opts));

  const AblationRow& base = result.rows[grid.baseline];
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (AblationRow& r : result.rows) {
    const bool both = r.ok && base.ok;
    r.d_auc = both ? r.report.auc - base.report.auc : nan;
    r.d_gauc = both ? r.report.gauc - base.report.gauc : nan;
    r.d_ndcg10 = both ? r.report.ndcg10 - base.report.ndcg10 : nan;
  }

  json rows = json::array();
  std::ofstream tsv(out / "ablation.tsv");
  tsv << "variant\timage_mode\tseed\tstatus\tauc\tgauc\tndcg10\td_auc\td_gauc\td_ndcg10\tbaseline\n";
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const AblationRow& r = result.rows[i];
    const std::string status = r.ok ? "ok" : "FAILED";
    const double auc = r.ok ? r.report.auc : nan;
    const double gauc = r.ok ? r.report.gauc : nan;
    const double ndcg = r.ok ? r.report.ndcg10 : nan;
    tsv << fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", model::to_string(r.cell.variant),
                       quant::to_string(r.cell.mode), r.cell.seed, status, fmt_num(auc), fmt_num(gauc),
                       fmt_num(ndcg), fmt_num(r.d_auc), fmt_num(r.d_gauc), fmt_num(r.d_ndcg10),
                       i == result.baseline ? 1 : 0);
    json row = {{"variant", model::to_string(r.cell.variant)},
                {"image_mode", quant::to_string(r.cell.mode)},
                {"seed", r.cell.seed},
                {"status", status},
                {"baseline", i == result.baseline},
                {"d_auc", num_or_null(r.d_auc)},
                {"d_gauc", num_or_null(r.d_gauc)},
                {"d_ndcg10", num_or_null(r.d_ndcg10)}};
    if (r.ok) {
      row["report"] = downstream::report_to_json(r.report);
    } else {
      row["error"] = r.error;
    }
    rows.push_back(std::move(row));
  }
  tsv.close();
  write_json({{"baseline", result.baseline}, {"rows", rows}}, out / "ablation.json");
  std::ofstream(out / "ablation.txt") << format_ablation_table(result);
  return result;
}

std::string format_ablation_table(const AblationResult& result) {
  std::string text = fmt::format("{:<30} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9}\n", "cell", "AUC", "GAUC",
                                 "NDCG@10", "dAUC", "dGAUC", "dNDCG");
  const AblationRow& base = result.rows.at(result.baseline);
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const AblationRow& r = result.rows[i];
    std::string label = cell_label(r.cell) + (i == result.baseline ? " *" : "");
    if (!r.ok) {
      text += fmt::format("{:<30} FAILED: {}\n", label, r.error);
      continue;
    }
    text += fmt::format("{:<30} {:>8.4f} {:>8.4f} {:>8.4f} {:>9} {:>9} {:>9}\n", label, r.report.auc,
                        r.report.gauc, r.report.ndcg10, pct(r.d_auc, base.report.auc),
                        pct(r.d_gauc, base.report.gauc), pct(r.d_ndcg10, base.report.ndcg10));
  }
  text += "* baseline; deltas relative to the baseline cell\n";
  return text;
}

}  // namespace courier::pipeline
