#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "anchorstream/anchors.hpp"
#include "anchorstream/config.hpp"
#include "anchorstream/datagen.hpp"
#include "anchorstream/engine.hpp"
#include "anchorstream/pipeline.hpp"
#include "anchorstream/report.hpp"

namespace fs = std::filesystem;
using namespace anchorstream;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    out.push_back(std::stoi(cell));
  }
  return out;
}

std::map<std::string, std::string> overrides_to_pairs(const std::vector<std::string>& sets) {
  std::map<std::string, std::string> pairs;
  for (const auto& item : sets) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size()) {
      throw ConfigError("--set expects key=value, got '" + item + "'");
    }
    pairs[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return pairs;
}

EngineConfig resolve_config(const std::string& config_path,
                            const std::vector<std::string>& sets) {
  EngineConfig config;
  if (!config_path.empty()) {
    config = apply_config_pairs(config, parse_config_file(config_path));
  }
  // command-line overrides win over the file
  config = apply_config_pairs(config, overrides_to_pairs(sets));
  return config;
}

void require_file(const std::string& path, const std::string& role) {
  if (path.empty()) throw ConfigError("missing required " + role + " path");
  if (!fs::exists(path)) {
    throw ConfigError(role + " not found: " + path +
                      (role == "anchors" ? " (run the anchors subcommand first)" : ""));
  }
}

struct GenDataArgs {
  std::string out_dir;
  int classes = 10;
  int dim = 4;
  int source_per_class = 500;
  int target_per_class = 1000;
  std::uint64_t seed = 0;
  std::string family = "rotation_mix";
  int severity = 3;
  std::string format = "bin";
  double mean_radius = 1.0;
  double cov_scale = 0.12;
};

int cmd_gen_data(const GenDataArgs& args) {
  if (args.format != "bin" && args.format != "csv") {
    throw ConfigError("--format must be bin or csv");
  }
  fs::create_directories(args.out_dir);
  const CorruptionFamily family = corruption_family_from_string(args.family);

  const DomainSpec source_spec = default_domain(args.classes, args.dim, args.source_per_class,
                                                args.seed, args.mean_radius, args.cov_scale);
  DomainSpec target_spec = default_domain(args.classes, args.dim, args.target_per_class,
                                          args.seed, args.mean_radius, args.cov_scale);
  // same class geometry, fresh draws for the target stream
  target_spec.seed = args.seed + 1000003;

  const Dataset source = generate(source_spec);
  const Dataset target_clean = generate(target_spec);
  const CorruptionSpec corruption{family, args.severity, args.seed + 2000003};
  const Dataset target = corrupt(target_clean, corruption);

  const std::string ext = args.format == "bin" ? ".bin" : ".csv";
  const auto save = [&](const Dataset& data, const std::string& stem) {
    const std::string path = (fs::path(args.out_dir) / (stem + ext)).string();
    if (args.format == "bin") {
      save_dataset_binary(data, path);
    } else {
      save_dataset_csv(data, path);
    }
    return stem + ext;
  };

  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["classes"] = args.classes;
  manifest["dim"] = args.dim;
  manifest["source_rows"] = source.rows();
  manifest["target_rows"] = target.rows();
  manifest["seed"] = args.seed;
  manifest["target_seed"] = target_spec.seed;
  manifest["corruption_seed"] = corruption.seed;
  manifest["family"] = args.family;
  manifest["severity"] = args.severity;
  manifest["mean_radius"] = args.mean_radius;
  manifest["cov_scale"] = args.cov_scale;
  manifest["files"] = {{"source", save(source, "source")},
                       {"target_clean", save(target_clean, "target_clean")},
                       {"target", save(target, "target")}};
  std::ofstream(fs::path(args.out_dir) / "manifest.json") << manifest.dump(2) << '\n';

  std::cout << "wrote " << source.rows() << " source and " << target.rows()
            << " target rows (" << args.family << " severity " << args.severity << ") to "
            << args.out_dir << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string hidden = "64,64";
  int feature_dim = 8;
  int epochs = 25;
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 128;
  double holdout = 0.1;
  std::uint64_t seed = 0;
};

int cmd_train_source(const TrainArgs& args) {
  require_file(args.data, "source data");
  if (args.out.empty()) throw ConfigError("missing required --out checkpoint path");
  const Dataset source = load_dataset(args.data);
  if (source.labels.empty()) throw ConfigError("source data has no labels");
  const int classes = 1 + *std::max_element(source.labels.begin(), source.labels.end());

  Model model = make_model(static_cast<int>(source.inputs.cols()), parse_int_list(args.hidden),
                           args.feature_dim, classes, args.seed);
  PretrainOptions opts;
  opts.epochs = args.epochs;
  opts.lr = args.lr;
  opts.momentum = args.momentum;
  opts.batch_size = args.batch_size;
  opts.holdout_fraction = args.holdout;
  opts.seed = args.seed;
  const PretrainResult result = pretrain_source(model, source, opts);

  if (const fs::path parent = fs::path(args.out).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  save_model(model, args.out);
  std::printf("trained %d epochs, final train loss %.6f, held-out accuracy %.4f\n",
              result.epochs_run, result.final_train_loss, result.holdout_accuracy);
  std::cout << "checkpoint written to " << args.out << "\n";
  return kExitOk;
}

struct AnchorArgs {
  std::string model;
  std::string data;
  std::string out;
};

int cmd_anchors(const AnchorArgs& args) {
  require_file(args.model, "model checkpoint");
  require_file(args.data, "source data");
  if (args.out.empty()) throw ConfigError("missing required --out anchors path");
  const Model model = load_model(args.model);
  const Dataset source = load_dataset(args.data);
  const SourceAnchors anchors = compute_source_anchors(model, source);
  if (const fs::path parent = fs::path(args.out).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  save_anchors(anchors, args.out);
  std::cout << "anchors for " << anchors.num_classes() << " classes (dim " << anchors.dim()
            << ") written to " << args.out << "\n";
  return kExitOk;
}

struct RunArgs {
  std::string data;
  std::string model;
  std::string anchors;
  std::string out_dir = "run-out";
  std::string config_file;
  std::vector<std::string> sets;
  int shuffles = 0;
  std::string family;  // descriptive only, echoed into the report row
  int severity = -1;
};

int cmd_run(const RunArgs& args) {
  require_file(args.data, "target data");
  require_file(args.model, "model checkpoint");
  EngineConfig config = resolve_config(args.config_file, args.sets);

  const Model model = load_model(args.model);
  std::optional<SourceAnchors> anchors;
  if (config.anchor_mode == AnchorMode::source_stats) {
    require_file(args.anchors, "anchors");
    anchors = load_anchors(args.anchors);
  }
  const Dataset target = load_dataset(args.data);
  if (target.labels.empty()) throw ConfigError("target data has no labels; cannot score a run");

  fs::create_directories(args.out_dir);
  const PipelineResult result =
      run_pipeline(model, anchors, target, config, std::nullopt, args.out_dir);

  RunReport report;
  report.config = config_to_map(config);
  report.final_error = result.final_error;
  report.samples = static_cast<std::int64_t>(result.series.size());
  report.series = downsample_series(result.series, 1000);
  BenchmarkRow row;
  row.family = args.family.empty() ? "unspecified" : args.family;
  row.severity = args.severity;
  row.baseline_error = result.baseline_error;
  row.adapted_error = result.final_error;
  report.rows.push_back(row);

  if (args.shuffles > 0) {
    report.robustness = order_robustness(
        [&](int i) {
          const std::uint64_t shuffle_seed = config.seed + 1 + static_cast<std::uint64_t>(i);
          return run_pipeline(model, anchors, target, config, shuffle_seed, args.out_dir)
              .final_error;
        },
        args.shuffles);
  }

  report.save((fs::path(args.out_dir) / "report.json").string());
  save_series_csv(report.series, (fs::path(args.out_dir) / "series.csv").string());
  result.log.save_csv((fs::path(args.out_dir) / "predictions.csv").string());
  save_timing(result.timing, (fs::path(args.out_dir) / "timing.json").string());

  std::printf("baseline error %.4f%%, adapted final error %.4f%% over %lld samples\n",
              result.baseline_error, result.final_error,
              static_cast<long long>(report.samples));
  std::cout << "report written to " << (fs::path(args.out_dir) / "report.json").string() << "\n";
  return kExitOk;
}

struct ReportArgs {
  std::string log;
  std::string out;
};

int cmd_report(const ReportArgs& args) {
  require_file(args.log, "prediction log");
  if (args.out.empty()) throw ConfigError("missing required --out report path");
  const PredictionLog log = PredictionLog::load_csv(args.log);
  const std::vector<double> series = cumulative_error(log);

  RunReport report;
  report.final_error = series.back();
  report.samples = static_cast<std::int64_t>(series.size());
  report.series = downsample_series(series, 1000);
  if (const fs::path parent = fs::path(args.out).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  report.save(args.out);
  std::printf("final cumulative error %.4f%% over %lld samples\n", report.final_error,
              static_cast<long long>(report.samples));
  return kExitOk;
}

struct SweepArgs {
  std::string data;
  std::string model;
  std::string anchors;
  std::string out_dir = "sweep-out";
  std::string config_file;
  std::vector<std::string> sets;
  std::string param;
  std::string values;
  std::string family = "rotation_mix";  // used when param == severity
};

int cmd_sweep(const SweepArgs& args) {
  require_file(args.data, "target data");
  require_file(args.model, "model checkpoint");
  if (args.param.empty() || args.values.empty()) {
    throw ConfigError("sweep needs --param and --values");
  }
  const EngineConfig base = resolve_config(args.config_file, args.sets);
  const Model model = load_model(args.model);
  std::optional<SourceAnchors> anchors;
  if (base.anchor_mode == AnchorMode::source_stats) {
    require_file(args.anchors, "anchors");
    anchors = load_anchors(args.anchors);
  }
  const Dataset data = load_dataset(args.data);
  if (data.labels.empty()) throw ConfigError("target data has no labels; cannot score a sweep");

  std::vector<std::string> values;
  {
    std::stringstream ss(args.values);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty()) values.push_back(cell);
    }
  }
  if (values.empty()) throw ConfigError("--values is empty");

  fs::create_directories(args.out_dir);
  nlohmann::json summary;
  summary["param"] = args.param;
  nlohmann::json points = nlohmann::json::array();

  for (const auto& value : values) {
    EngineConfig config = base;
    Dataset target = data;
    if (args.param == "severity") {
      // sweep over the corruption itself: --data must be the clean target
      const CorruptionSpec spec{corruption_family_from_string(args.family),
                                std::stoi(value), base.seed + 2000003};
      target = corrupt(data, spec);
    } else {
      config = apply_config_pairs(config, {{args.param, value}});
    }

    const fs::path point_dir = fs::path(args.out_dir) / (args.param + "=" + value);
    fs::create_directories(point_dir);
    const PipelineResult result =
        run_pipeline(model, anchors, target, config, std::nullopt, point_dir.string());

    RunReport report;
    report.config = config_to_map(config);
    report.final_error = result.final_error;
    report.samples = static_cast<std::int64_t>(result.series.size());
    report.series = downsample_series(result.series, 1000);
    BenchmarkRow row;
    row.family = args.param == "severity" ? args.family : "unspecified";
    row.severity = args.param == "severity" ? std::stoi(value) : -1;
    row.baseline_error = result.baseline_error;
    row.adapted_error = result.final_error;
    report.rows.push_back(row);
    report.save((point_dir / "report.json").string());
    save_series_csv(report.series, (point_dir / "series.csv").string());

    char final_buf[64], base_buf[64];
    std::snprintf(final_buf, sizeof(final_buf), "%.17g", result.final_error);
    std::snprintf(base_buf, sizeof(base_buf), "%.17g", result.baseline_error);
    points.push_back({{"value", value},
                      {"final_error", final_buf},
                      {"baseline_error", base_buf},
                      {"report", (point_dir / "report.json").string()}});
    std::printf("%s = %s: baseline %.4f%%, adapted %.4f%%\n", args.param.c_str(), value.c_str(),
                result.baseline_error, result.final_error);
  }
  summary["points"] = std::move(points);
  std::ofstream((fs::path(args.out_dir) / "sweep.json")) << summary.dump(2) << '\n';
  std::cout << "sweep summary written to " << (fs::path(args.out_dir) / "sweep.json").string()
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anchorstream: streaming test-time adaptation with anchored clustering"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic source/target pair");
  gen->add_option("--out", gen_args.out_dir, "output directory")->required();
  gen->add_option("--classes", gen_args.classes, "number of classes");
  gen->add_option("--dim", gen_args.dim, "input dimension");
  gen->add_option("--source-per-class", gen_args.source_per_class, "source rows per class");
  gen->add_option("--target-per-class", gen_args.target_per_class, "target rows per class");
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--family", gen_args.family,
                  "corruption family (gaussian_noise, rotation_mix, channel_scale, "
                  "dim_occlusion, impulse)");
  gen->add_option("--severity", gen_args.severity, "corruption severity 0..5");
  gen->add_option("--format", gen_args.format, "bin or csv");
  gen->add_option("--mean-radius", gen_args.mean_radius, "norm of the class mean directions");
  gen->add_option("--cov-scale", gen_args.cov_scale, "isotropic within-class spread");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train-source", "pretrain the source model");
  train->add_option("--data", train_args.data, "labelled source dataset")->required();
  train->add_option("--out", train_args.out, "checkpoint output path")->required();
  train->add_option("--hidden", train_args.hidden, "comma-separated hidden widths");
  train->add_option("--feature-dim", train_args.feature_dim, "feature layer width");
  train->add_option("--epochs", train_args.epochs, "training epochs");
  train->add_option("--lr", train_args.lr, "learning rate");
  train->add_option("--momentum", train_args.momentum, "sgd momentum");
  train->add_option("--batch-size", train_args.batch_size, "minibatch size");
  train->add_option("--holdout", train_args.holdout, "held-out fraction");
  train->add_option("--seed", train_args.seed, "training seed");

  AnchorArgs anchor_args;
  auto* anchor = app.add_subcommand("anchors", "freeze per-class source feature statistics");
  anchor->add_option("--model", anchor_args.model, "model checkpoint")->required();
  anchor->add_option("--data", anchor_args.data, "labelled source dataset")->required();
  anchor->add_option("--out", anchor_args.out, "anchors output path")->required();

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "stream a target set through the adaptation engine");
  run->add_option("--data", run_args.data, "labelled target dataset")->required();
  run->add_option("--model", run_args.model, "model checkpoint")->required();
  run->add_option("--anchors", run_args.anchors, "anchors file (source_stats mode)");
  run->add_option("--out", run_args.out_dir, "output directory");
  run->add_option("--config", run_args.config_file, "flat key = value config file");
  run->add_option("--set", run_args.sets, "config override key=value (repeatable)");
  run->add_option("--shuffles", run_args.shuffles,
                  "also replay N shuffled arrival orders and report mean/std");
  run->add_option("--family", run_args.family, "corruption family label for the report");
  run->add_option("--severity", run_args.severity, "corruption severity label for the report");

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "recompute metrics from a prediction log");
  report->add_option("--log", report_args.log, "predictions.csv from a run")->required();
  report->add_option("--out", report_args.out, "report output path")->required();

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "one-dimensional config or severity sweep");
  sweep->add_option("--data", sweep_args.data, "labelled target dataset (clean when sweeping severity)")
      ->required();
  sweep->add_option("--model", sweep_args.model, "model checkpoint")->required();
  sweep->add_option("--anchors", sweep_args.anchors, "anchors file (source_stats mode)");
  sweep->add_option("--out", sweep_args.out_dir, "output directory");
  sweep->add_option("--config", sweep_args.config_file, "flat key = value config file");
  sweep->add_option("--set", sweep_args.sets, "config override key=value (repeatable)");
  sweep->add_option("--param", sweep_args.param, "config key to sweep, or 'severity'")
      ->required();
  sweep->add_option("--values", sweep_args.values, "comma-separated sweep values")->required();
  sweep->add_option("--family", sweep_args.family, "corruption family for severity sweeps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
      return app.exit(e);
    }
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (train->parsed()) return cmd_train_source(train_args);
    if (anchor->parsed()) return cmd_anchors(anchor_args);
    if (run->parsed()) return cmd_run(run_args);
    if (report->parsed()) return cmd_report(report_args);
    if (sweep->parsed()) return cmd_sweep(sweep_args);
    std::cerr << "no subcommand given\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const TrainingError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const AnchorError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ReportError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
