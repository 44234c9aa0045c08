// Command-line entry point: corrupt | train | evaluate | sweep | ablate |
// report | datasets. Every run directory receives a run_record.json with the
// effective config hash and the exact command line, and all randomness flows
// from the config seed.
#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmlnet/checkpoint.hpp"
#include "mmlnet/config.hpp"
#include "mmlnet/corruption.hpp"
#include "mmlnet/datasets.hpp"
#include "mmlnet/errors.hpp"
#include "mmlnet/metrics.hpp"
#include "mmlnet/model.hpp"
#include "mmlnet/trainer.hpp"

namespace fs = std::filesystem;
using mmlnet::ConfigError;
using mmlnet::DataError;
namespace config = mmlnet::config;
namespace corr = mmlnet::corruption;
namespace ds = mmlnet::datasets;
namespace metrics = mmlnet::metrics;
namespace trainer = mmlnet::trainer;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_global_options(CLI::App* cmd, GlobalArgs& g) {
  cmd->add_option("--config", g.config_path, "Config file (INI)");
  cmd->add_option("--out", g.out_dir, "Output directory");
  cmd->add_option("--seed", g.seed, "Override the config seed");
  cmd->add_option("--override", g.overrides,
                  "Config override key=value or section.key=value (repeatable)");
}

config::ExperimentConfig effective_config(const GlobalArgs& g) {
  config::ExperimentConfig cfg =
      g.config_path.empty() ? config::ExperimentConfig{} : config::load_config(g.config_path);
  cfg = config::apply_overrides(std::move(cfg), g.overrides);
  if (g.seed) cfg.seed = *g.seed;
  config::validate(cfg);
  return cfg;
}

/// Resolved output directory: --out wins, otherwise a config-addressed
/// subdirectory of the cache (MMLNET_CACHE_DIR, default ./runs) so reruns of
/// the same configuration land in the same place.
fs::path resolve_out(const GlobalArgs& g, const std::string& subcommand,
                     const config::ExperimentConfig& cfg) {
  fs::path dir;
  if (!g.out_dir.empty()) {
    dir = g.out_dir;
  } else {
    const char* cache = std::getenv("MMLNET_CACHE_DIR");
    dir = fs::path(cache ? cache : "runs") / (subcommand + "_" + config::config_hash(cfg));
  }
  fs::create_directories(dir);
  return dir;
}

std::string quote_if_needed(const std::string& arg) {
  if (arg.find_first_of(" \t\"") == std::string::npos) return arg;
  std::string quoted = "\"";
  for (char c : arg) {
    if (c == '"' || c == '\\') quoted += '\\';
    quoted += c;
  }
  return quoted + '"';
}

std::string command_line(int argc, char** argv) {
  std::string cmd;
  for (int i = 0; i < argc; ++i) {
    if (i) cmd += ' ';
    cmd += quote_if_needed(argv[i]);
  }
  return cmd;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_run_record(const fs::path& dir, const config::ExperimentConfig& cfg,
                      const std::string& command, const std::vector<fs::path>& outputs) {
  nlohmann::json rec = {
      {"config_hash", config::config_hash(cfg)},
      {"command", command},
      {"timestamp", utc_timestamp()},
      {"outputs", nlohmann::json::array()},
  };
  for (const fs::path& p : outputs) rec["outputs"].push_back(p.string());
  std::ofstream f(dir / "run_record.json", std::ios::trunc);
  if (!f) throw DataError("cannot write run record in " + dir.string());
  f << rec.dump(2) << '\n';
}

std::vector<ds::Sample> load_samples(const std::string& manifest,
                                     const config::ExperimentConfig& cfg) {
  return ds::load_manifest(manifest, cfg.image_side);
}

metrics::MetricsReport evaluate_checkpoint(const mmlnet::checkpoint::CheckpointData& data,
                                           const mmlnet::model::MmlNet& net,
                                           const std::vector<ds::Sample>& samples,
                                           corr::MissingRates scenario, std::uint64_t mask_seed) {
  auto [masked, masks] =
      corr::corrupt_dataset(samples, scenario, mask_seed, data.config.patch_size);
  (void)masked;
  return metrics::evaluate(net, samples, masks, scenario);
}

void print_report(const metrics::MetricsReport& r) {
  std::printf("scenario=%s n=%d acc=%.6f macro_f1=%.6f auc=%.6f\n",
              corr::scenario_tag(r.scenario).c_str(), r.n_samples, r.acc, r.macro_f1, r.auc);
}

// ---- subcommands ----

int cmd_corrupt(const GlobalArgs& g, const std::string& manifest, const std::string& command) {
  const config::ExperimentConfig cfg = effective_config(g);
  const fs::path out = resolve_out(g, "corrupt", cfg);
  const std::vector<ds::Sample> samples = load_samples(manifest, cfg);
  auto [masked, masks] = corr::corrupt_dataset(samples, cfg.rates, cfg.seed, cfg.patch_size);
  (void)masked;
  const fs::path mask_path = out / ("masks_" + corr::scenario_tag(cfg.rates) + ".jsonl");
  corr::save_masks(masks, mask_path.string());
  write_run_record(out, cfg, command, {mask_path});
  std::printf("corrupt: samples=%zu text_rate=%d image_rate=%d seed=%llu\n", samples.size(),
              cfg.rates.text_rate, cfg.rates.image_rate,
              static_cast<unsigned long long>(cfg.seed));
  std::printf("masks=%s\n", mask_path.string().c_str());
  return 0;
}

int cmd_train(const GlobalArgs& g, const std::string& manifest, const std::string& masks_path,
              const std::string& command) {
  const config::ExperimentConfig cfg = effective_config(g);
  const fs::path out = resolve_out(g, "train", cfg);
  const std::vector<ds::Sample> samples = load_samples(manifest, cfg);
  const std::vector<corr::MaskSpec> masks = corr::load_masks(masks_path);

  trainer::TrainPaths paths;
  paths.final_checkpoint = (out / "final.ckpt").string();
  paths.best_checkpoint = (out / "best.ckpt").string();
  paths.history = (out / "history.jsonl").string();
  const trainer::TrainOutput result = trainer::train(cfg, samples, masks, paths);

  write_run_record(out, cfg, command,
                   {paths.final_checkpoint, paths.best_checkpoint, paths.history});
  std::printf("config_hash=%s\n", config::config_hash(cfg).c_str());
  std::printf("trained: epochs=%d samples=%zu\n", cfg.epochs, samples.size());
  if (!result.history.empty())
    std::printf("final: train_loss=%.6f probe_loss=%.6f\n", result.history.back().train_loss,
                result.history.back().probe_loss);
  if (result.best_val_acc)
    std::printf("best: epoch=%d val_acc=%.6f\n", result.best_epoch, *result.best_val_acc);
  std::printf("checkpoint=%s\n", paths.final_checkpoint.c_str());
  return 0;
}

int cmd_evaluate(const GlobalArgs& g, const std::string& checkpoint, const std::string& manifest,
                 const std::string& scenario_arg, const std::string& command) {
  const mmlnet::checkpoint::CheckpointData data = mmlnet::checkpoint::read(checkpoint);
  mmlnet::model::MmlNet net(data.config);
  mmlnet::checkpoint::restore(data, net.params(), data.config_hash);

  // The checkpoint's embedded config governs evaluation; --seed may redirect
  // the mask stream, --scenario the rates (default: the training rates).
  const corr::MissingRates scenario =
      scenario_arg.empty() ? data.config.rates : corr::parse_scenario_tag(scenario_arg);
  const std::uint64_t mask_seed = g.seed ? *g.seed : data.config.seed;
  const fs::path out = resolve_out(g, "evaluate", data.config);
  const std::vector<ds::Sample> samples = load_samples(manifest, data.config);

  const metrics::MetricsReport report =
      evaluate_checkpoint(data, net, samples, scenario, mask_seed);
  const fs::path report_path = out / ("report_" + corr::scenario_tag(scenario) + ".jsonl");
  metrics::save_reports(report_path.string(), {report});
  write_run_record(out, data.config, command, {report_path});
  print_report(report);
  return 0;
}

int cmd_sweep(const GlobalArgs& g, const std::string& manifest,
              const std::vector<std::string>& run_dirs, const std::string& command) {
  const config::ExperimentConfig cfg = effective_config(g);
  const fs::path out = resolve_out(g, "sweep", cfg);

  std::map<std::string, std::string> checkpoint_by_tag;
  for (const std::string& dir : run_dirs) {
    const fs::path ckpt = fs::path(dir) / "final.ckpt";
    if (!fs::exists(ckpt)) throw DataError("no final.ckpt in run directory " + dir);
    const mmlnet::checkpoint::CheckpointData data = mmlnet::checkpoint::read(ckpt.string());
    const std::string tag = corr::scenario_tag(data.config.rates);
    const auto [it, inserted] = checkpoint_by_tag.emplace(tag, ckpt.string());
    if (!inserted)
      throw DataError("two checkpoints train at scenario " + tag + ": " + it->second + " and " +
                      ckpt.string());
  }

  const std::vector<ds::Sample> samples = load_samples(manifest, cfg);
  const std::vector<metrics::SweepRow> rows = metrics::sweep(checkpoint_by_tag, samples, cfg.seed);

  std::vector<metrics::MetricsReport> present;
  for (const metrics::SweepRow& row : rows)
    if (row.report) present.push_back(*row.report);
  const fs::path table_path = out / "table.txt";
  const fs::path tsv_path = out / "table.tsv";
  const fs::path reports_path = out / "reports.jsonl";
  std::ofstream(table_path) << metrics::render_table(rows);
  std::ofstream(tsv_path) << metrics::render_tsv(rows);
  metrics::save_reports(reports_path.string(), present);
  write_run_record(out, cfg, command, {table_path, tsv_path, reports_path});
  std::fputs(metrics::render_table(rows).c_str(), stdout);
  return 0;
}

std::string toggle_set_slug(const std::vector<std::string>& toggles) {
  if (toggles.empty()) return "base";
  std::string slug;
  for (const std::string& t : toggles) {
    if (!slug.empty()) slug += '+';
    slug += t;
  }
  return slug;
}

std::string toggle_set_label(const std::vector<std::string>& toggles) {
  if (toggles.empty()) return "full model";
  std::string label;
  for (const std::string& t : toggles) {
    if (!label.empty()) label += " + ";
    label += config::ablation_label(t);
  }
  return label;
}

int cmd_ablate(const GlobalArgs& g, const std::string& manifest,
               const std::string& eval_manifest_arg, const std::vector<std::string>& toggle_sets,
               const std::string& command) {
  const config::ExperimentConfig base_cfg = effective_config(g);
  const fs::path out = resolve_out(g, "ablate", base_cfg);
  const std::string eval_manifest = eval_manifest_arg.empty() ? manifest : eval_manifest_arg;

  // The base run plus one run per toggle set, all sharing the base seed.
  std::vector<std::vector<std::string>> variants;
  variants.emplace_back();
  for (const std::string& set : toggle_sets) {
    std::vector<std::string> toggles;
    std::string item;
    for (char c : set + ",") {
      if (c == ',') {
        if (!item.empty()) toggles.push_back(item);
        item.clear();
      } else {
        item += c;
      }
    }
    std::sort(toggles.begin(), toggles.end());
    toggles.erase(std::unique(toggles.begin(), toggles.end()), toggles.end());
    variants.push_back(std::move(toggles));
  }

  const std::vector<ds::Sample> train_samples = load_samples(manifest, base_cfg);
  const std::vector<ds::Sample> eval_samples = load_samples(eval_manifest, base_cfg);

  std::vector<metrics::MetricsReport> reports;
  std::vector<fs::path> outputs;
  for (const std::vector<std::string>& toggles : variants) {
    config::ExperimentConfig cfg = base_cfg;
    cfg.ablation.insert(cfg.ablation.end(), toggles.begin(), toggles.end());
    std::sort(cfg.ablation.begin(), cfg.ablation.end());
    cfg.ablation.erase(std::unique(cfg.ablation.begin(), cfg.ablation.end()),
                       cfg.ablation.end());
    config::validate(cfg);

    const fs::path run_dir = out / toggle_set_slug(toggles);
    fs::create_directories(run_dir);
    auto [masked, masks] =
        corr::corrupt_dataset(train_samples, cfg.rates, cfg.seed, cfg.patch_size);
    (void)masked;
    trainer::TrainPaths paths;
    paths.final_checkpoint = (run_dir / "final.ckpt").string();
    paths.history = (run_dir / "history.jsonl").string();
    const trainer::TrainOutput result = trainer::train(cfg, train_samples, masks, paths);

    auto [eval_masked, eval_masks] =
        corr::corrupt_dataset(eval_samples, cfg.rates, cfg.seed, cfg.patch_size);
    (void)eval_masked;
    metrics::MetricsReport report =
        metrics::evaluate(*result.net, eval_samples, eval_masks, cfg.rates);
    const fs::path report_path = run_dir / "report.jsonl";
    metrics::save_reports(report_path.string(), {report});
    reports.push_back(report);
    outputs.insert(outputs.end(), {paths.final_checkpoint, paths.history, report_path});
  }

  // Table-style comparison: absolute metrics plus signed deltas vs the base.
  std::string table;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %8s %8s %8s %8s %8s %8s\n", "variant", "ACC", "M-F1",
                "AUC", "dACC", "dM-F1", "dAUC");
  table += line;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const metrics::MetricsReport& r = reports[i];
    std::snprintf(line, sizeof line, "%-28s %8.4f %8.4f %8.4f %+8.4f %+8.4f %+8.4f\n",
                  toggle_set_label(variants[i]).c_str(), r.acc, r.macro_f1, r.auc,
                  r.acc - reports[0].acc, r.macro_f1 - reports[0].macro_f1,
                  r.auc - reports[0].auc);
    table += line;
  }
  const fs::path table_path = out / "ablation_table.txt";
  std::ofstream(table_path) << table;
  outputs.push_back(table_path);
  write_run_record(out, base_cfg, command, outputs);
  std::fputs(table.c_str(), stdout);
  return 0;
}

int cmd_report(const GlobalArgs& g, const std::vector<std::string>& run_dirs,
               const std::string& command) {
  const config::ExperimentConfig cfg = effective_config(g);
  const fs::path out = resolve_out(g, "report", cfg);

  std::vector<metrics::MetricsReport> all;
  for (const std::string& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw DataError("not a run directory: " + dir);
    bool found = false;
    for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && name.size() > 6 && name.substr(0, 6) == "report" &&
          entry.path().extension() == ".jsonl") {
        const std::vector<metrics::MetricsReport> loaded =
            metrics::load_reports(entry.path().string());
        all.insert(all.end(), loaded.begin(), loaded.end());
        found = true;
      }
    }
    if (!found) throw DataError("no report*.jsonl in run directory " + dir);
  }

  const std::vector<metrics::SweepRow> rows = metrics::merge_reports(all);
  const fs::path table_path = out / "table.txt";
  const fs::path tsv_path = out / "table.tsv";
  std::ofstream(table_path) << metrics::render_table(rows);
  std::ofstream(tsv_path) << metrics::render_tsv(rows);
  write_run_record(out, cfg, command, {table_path, tsv_path});
  std::fputs(metrics::render_table(rows).c_str(), stdout);
  return 0;
}

int cmd_datasets_validate(const GlobalArgs& g, const std::string& manifest) {
  const config::ExperimentConfig cfg = effective_config(g);
  const std::vector<ds::Sample> samples = load_samples(manifest, cfg);
  std::fputs(ds::render_summary(ds::summarize(samples)).c_str(), stdout);
  return 0;
}

int cmd_datasets_generate(const GlobalArgs& g, int n, double separation, double noise,
                          const std::string& command) {
  const config::ExperimentConfig cfg = effective_config(g);
  const fs::path out = resolve_out(g, "datasets", cfg);
  ds::SyntheticSpec spec;
  spec.n = n;
  spec.seed = cfg.seed;
  spec.separation = separation;
  spec.noise = noise;
  spec.image_side = cfg.image_side;
  spec.patch_size = cfg.patch_size;
  const std::vector<ds::Sample> samples = ds::generate_synthetic(spec);
  const fs::path manifest_path = out / "manifest.jsonl";
  ds::write_manifest(samples, manifest_path.string());
  write_run_record(out, cfg, command, {manifest_path});
  std::fputs(ds::render_summary(ds::summarize(samples)).c_str(), stdout);
  std::printf("manifest=%s\n", manifest_path.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal misinformation recognition under incomplete modalities"};
  app.require_subcommand(1);
  const std::string command = command_line(argc, argv);

  GlobalArgs g;
  std::string manifest, eval_manifest, masks_path, checkpoint, scenario;
  std::vector<std::string> run_dirs, toggle_sets;
  int gen_n = 200;
  double gen_separation = 0.5, gen_noise = 0.2;

  CLI::App* corrupt = app.add_subcommand("corrupt", "Freeze per-sample modality masks");
  add_global_options(corrupt, g);
  corrupt->add_option("--manifest", manifest, "Dataset manifest")->required();

  CLI::App* train = app.add_subcommand("train", "Train a model on a masked dataset");
  add_global_options(train, g);
  train->add_option("--manifest", manifest, "Dataset manifest")->required();
  train->add_option("--masks", masks_path, "Pre-stored mask file")->required();

  CLI::App* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  add_global_options(evaluate, g);
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--manifest", manifest, "Dataset manifest")->required();
  evaluate->add_option("--scenario", scenario, "Scenario tag, e.g. t25_i50 (default: training rates)");

  CLI::App* sweep = app.add_subcommand("sweep", "Evaluate per-scenario checkpoints over the grid");
  add_global_options(sweep, g);
  sweep->add_option("--manifest", manifest, "Dataset manifest")->required();
  sweep->add_option("--runs", run_dirs, "Training run directories (final.ckpt each)")
      ->required()
      ->expected(-1);

  CLI::App* ablate = app.add_subcommand("ablate", "Train ablation variants and compare");
  add_global_options(ablate, g);
  ablate->add_option("--manifest", manifest, "Training manifest")->required();
  ablate->add_option("--eval-manifest", eval_manifest, "Evaluation manifest (default: training)");
  ablate->add_option("--toggles", toggle_sets,
                     "Comma-joined toggle set, one run per flag (repeatable)");

  CLI::App* report = app.add_subcommand("report", "Merge run reports into the grid table");
  add_global_options(report, g);
  report->add_option("--runs", run_dirs, "Run directories with report*.jsonl files")
      ->required()
      ->expected(-1);

  CLI::App* datasets = app.add_subcommand("datasets", "Dataset utilities");
  datasets->require_subcommand(1);
  CLI::App* validate = datasets->add_subcommand("validate", "Check and summarize a manifest");
  add_global_options(validate, g);
  validate->add_option("--manifest", manifest, "Dataset manifest")->required();
  CLI::App* generate = datasets->add_subcommand("generate", "Write a synthetic manifest");
  add_global_options(generate, g);
  generate->add_option("--n", gen_n, "Sample count");
  generate->add_option("--separation", gen_separation, "Class separation in [0,1]");
  generate->add_option("--noise", gen_noise, "Corruption level in [0,1]");

  try {
    app.parse(argc, argv);
    if (corrupt->parsed()) return cmd_corrupt(g, manifest, command);
    if (train->parsed()) return cmd_train(g, manifest, masks_path, command);
    if (evaluate->parsed()) return cmd_evaluate(g, checkpoint, manifest, scenario, command);
    if (sweep->parsed()) return cmd_sweep(g, manifest, run_dirs, command);
    if (ablate->parsed()) return cmd_ablate(g, manifest, eval_manifest, toggle_sets, command);
    if (report->parsed()) return cmd_report(g, run_dirs, command);
    if (datasets->parsed()) {
      if (validate->parsed()) return cmd_datasets_validate(g, manifest);
      if (generate->parsed()) return cmd_datasets_generate(g, gen_n, gen_separation, gen_noise, command);
    }
    return 3;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
}
