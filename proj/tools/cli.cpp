#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <ostream>
#include <set>

#include <CLI11.hpp>

#include "mdood/errors.hpp"
#include "mdood/experiment.hpp"
#include "mdood/parallel.hpp"
#include "mdood/synth.hpp"

namespace mdood {

namespace fs = std::filesystem;

namespace {

struct RunConfig {
  std::string subcommand;
  fs::path manifest;
  fs::path model;
  fs::path run_dir;
  std::size_t budget = kDefaultDimensionBudget;
  double sigma_scale = kDefaultSigmaScale;
  double eps_scale = kDefaultEpsScale;
  std::vector<double> temperatures{1.0, 10.0, 100.0};
  std::size_t esce_bins = kDefaultEsceBins;
  double dice_cut = kDefaultDiceCut;
  std::uint64_t seed = 1;
  int verbosity = 0;
  std::size_t workers = resolve_workers(0);
  std::vector<std::string> methods;
  bool masks = false;
  SynthConfig synth;
};

ExperimentOptions to_options(const RunConfig& c) {
  ExperimentOptions o;
  o.budget = c.budget;
  o.sigma_scale = c.sigma_scale;
  o.eps_scale = c.eps_scale;
  o.temperatures = c.temperatures;
  o.esce_bins = c.esce_bins;
  o.dice_cut = c.dice_cut;
  o.workers = c.workers;
  if (c.masks) o.mask_dir = c.run_dir / "masks";
  return o;
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const auto& n : names) {
    auto m = parse_method(n);
    if (!m) throw ValidationError("unknown method '" + n + "'");
    if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
  }
  return out;
}

fs::path model_path(const RunConfig& c) { return c.model.empty() ? c.run_dir / "model.mdm" : c.model; }

void validate_common(const RunConfig& c) {
  if (c.budget < 1) throw ValidationError("--budget must be >= 1");
  if (!(c.sigma_scale > 0)) throw ValidationError("--sigma-scale must be > 0");
  if (!(c.eps_scale > 0)) throw ValidationError("--eps-scale must be > 0");
  if (c.temperatures.empty()) throw ValidationError("--temperatures must not be empty");
  for (double t : c.temperatures) {
    if (!(t > 0)) throw ValidationError("--temperatures must be > 0");
  }
  if (c.esce_bins < 1) throw ValidationError("--esce-bins must be >= 1");
  if (!(c.dice_cut >= 0 && c.dice_cut <= 1)) throw ValidationError("--dice-cut must be in [0, 1]");
}

int cmd_fit(const RunConfig& c, std::ostream& out) {
  const auto subjects = load_manifest(c.manifest);
  FitSummary summary;
  const GaussianModel model = fit_from_manifest(subjects, to_options(c), &summary);
  fs::create_directories(c.run_dir);
  const fs::path path = model_path(c);
  save_model(model, path);
  write_fit_summary(summary, model, c.run_dir / "fit_summary.json");
  record_artifacts(c.run_dir, "fit", {path, c.run_dir / "fit_summary.json"});
  out << "fitted N=" << summary.n_samples << " d=" << summary.dim << " eps=" << summary.eps
      << " in " << summary.seconds << " s -> " << path.string() << '\n';
  return 0;
}

int cmd_score(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto methods = parse_methods(c.methods);
  const auto subjects = load_manifest(c.manifest);
  std::optional<GaussianModel> model;
  if (std::find(methods.begin(), methods.end(), Method::kMahalanobis) != methods.end()) {
    std::optional<std::string> tap;
    if (!subjects.empty()) tap = subjects.front().feature_tap;
    model = load_model(model_path(c), tap);
  }
  fs::create_directories(c.run_dir);
  const ExperimentOptions opts = to_options(c);
  const ScoreTable table = score_subjects(subjects, methods, model ? &*model : nullptr, opts);
  write_scores(table, c.run_dir);
  std::vector<fs::path> files{c.run_dir / "scores.csv", c.run_dir / "score_errors.json"};
  if (opts.mask_dir) files.push_back(*opts.mask_dir);
  record_artifacts(c.run_dir, "score", files);
  for (const auto& f : table.failures) err << "warning: " << f.method << ": " << f.message << '\n';
  out << "scored " << subjects.size() << " subjects, " << table.keys().size() << " score keys -> "
      << (c.run_dir / "scores.csv").string() << '\n';
  return 0;
}

int cmd_calibrate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const ScoreTable table = read_scores(c.run_dir);
  std::vector<MethodFailure> failures;
  const auto entries = calibrate(table, &failures);
  write_calibration(entries, c.run_dir / "calibration.json");
  record_artifacts(c.run_dir, "calibrate", {c.run_dir / "calibration.json"});
  for (const auto& f : failures) err << "warning: " << f.method << ": " << f.message << '\n';
  for (const auto& e : entries) {
    out << e.key << ": tau=" << e.tau << " (train min " << e.train_min << ", max " << e.train_max
        << ", n=" << e.n_train << (e.degenerate ? ", degenerate" : "") << ")\n";
  }
  return 0;
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  std::vector<Method> methods = parse_methods(c.methods);
  const auto subjects = load_manifest(c.manifest);
  const ScoreTable table = read_scores(c.run_dir);
  if (methods.empty()) {
    // Everything present in the cache, in canonical order.
    std::set<std::string> present;
    for (const auto& k : table.keys()) present.insert(k.substr(0, k.find('@')));
    for (const auto& f : table.failures) present.insert(f.method);
    for (Method m : all_methods()) {
      if (present.count(to_string(m))) methods.push_back(m);
    }
  }
  const auto reports = evaluate(subjects, table, methods, to_options(c));
  write_reports(reports, c.run_dir / "report.jsonl");
  write_subject_table(reports, c.run_dir / "subjects.csv");
  record_artifacts(c.run_dir, "evaluate", {c.run_dir / "report.jsonl", c.run_dir / "subjects.csv"});
  out << format_report_table(reports);
  return 0;
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  SynthConfig cfg = c.synth;
  cfg.seed = c.seed;
  cfg.workers = c.workers;
  const SynthOutput result = generate(cfg, c.run_dir);
  record_artifacts(c.run_dir, "synth", {result.manifest_path, c.run_dir / "subjects"});
  out << "wrote " << result.subjects.size() << " subjects (d=" << cfg.feature_dim() << ") -> "
      << result.manifest_path.string() << '\n';
  return 0;
}

int cmd_report(const RunConfig& c, std::ostream& out) {
  out << format_report_table(read_reports(c.run_dir / "report.jsonl"));
  return 0;
}

template <typename T>
CLI::Option* shape_option(CLI::App* app, const std::string& name, T& target, const std::string& doc) {
  return app->add_option(name, target, doc)->delimiter(',')->expected(3);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"Post-hoc out-of-distribution detection for patch-based segmentation models.",
               "mdood"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--workers", c.workers, "Worker threads (default: available cores)")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", c.seed, "Seed for synthetic data generation");
  app.add_flag("-v,--verbose", c.verbosity, "Increase verbosity (repeatable)");

  auto manifest_opt = [&](CLI::App* sub) {
    sub->add_option("--manifest", c.manifest, "Manifest (JSON lines)")->required();
  };
  auto run_dir_opt = [&](CLI::App* sub) {
    sub->add_option("--run-dir", c.run_dir, "Run directory holding all outputs")->required();
  };
  auto methods_opt = [&](CLI::App* sub, const std::string& doc) {
    sub->add_option("--methods", c.methods, doc)->delimiter(',');
  };

  auto* fit = app.add_subcommand("fit", "Fit the Gaussian on train-subject features");
  manifest_opt(fit);
  run_dir_opt(fit);
  fit->add_option("--model", c.model, "Model output path (default: <run-dir>/model.mdm)");
  fit->add_option("--budget", c.budget, "Projected feature dimension budget");
  fit->add_option("--eps-scale", c.eps_scale, "Diagonal loading relative to mean variance");

  auto* score = app.add_subcommand("score", "Compute raw subject scores for each method");
  manifest_opt(score);
  run_dir_opt(score);
  score->add_option("--model", c.model, "Model path (default: <run-dir>/model.mdm)");
  c.methods.clear();
  for (Method m : all_methods()) c.methods.emplace_back(to_string(m));
  methods_opt(score, "Methods to score");
  score->add_option("--budget", c.budget, "Projected feature dimension budget");
  score->add_option("--sigma-scale", c.sigma_scale, "Importance map sigma relative to patch size");
  score->add_option("--temperatures", c.temperatures, "Temperatures for the scaled baselines")
      ->delimiter(',');
  score->add_flag("--masks", c.masks, "Also write distance uncertainty masks");

  auto* calib = app.add_subcommand("calibrate", "Normalisation bounds and 95% TPR threshold");
  run_dir_opt(calib);

  auto* eval = app.add_subcommand("evaluate", "Metrics and per-subject table from cached scores");
  manifest_opt(eval);
  run_dir_opt(eval);
  std::vector<std::string> eval_methods;
  eval->add_option("--methods", eval_methods, "Methods to report (default: all scored)")
      ->delimiter(',');
  eval->add_option("--esce-bins", c.esce_bins, "Number of ESCE uncertainty bins");
  eval->add_option("--dice-cut", c.dice_cut, "Dice below which a prediction is a failure");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic manifest and tensors");
  synth->add_option("--out", c.run_dir, "Output directory")->required();
  SynthConfig& s = c.synth;
  synth->add_option("--channels", s.channels, "Feature channels");
  shape_option(synth, "--feature-spatial", s.feature_spatial, "Projected spatial extents");
  synth->add_option("--upsample-rounds", s.upsample_rounds, "Feature map 2x upsampling rounds");
  synth->add_option("--train", s.n_train, "Train subjects");
  synth->add_option("--id-test", s.n_id_test, "ID test subjects");
  synth->add_option("--ood", s.n_ood, "OOD subjects per shift magnitude");
  synth->add_option("--magnitudes", s.shift_magnitudes, "Shift magnitudes in ID std units")
      ->delimiter(',');
  synth->add_option("--condition", s.covariance_condition, "ID covariance condition number");
  shape_option(synth, "--image", s.image_shape, "Image shape");
  shape_option(synth, "--patch", s.patch_size, "Patch shape");
  synth->add_option("--samples", s.num_samples, "Prediction samples per patch (0 disables)");
  synth->add_option("--tap", s.feature_tap, "Feature tap label");
  synth->add_option("--dataset-tag", s.dataset_tag, "Dataset tag");

  auto* report = app.add_subcommand("report", "Print the evaluation table of a run");
  run_dir_opt(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_code_for(ErrorCategory::kValidation);
  }

  try {
    validate_common(c);
    if (*fit) return cmd_fit(c, out);
    if (*score) return cmd_score(c, out, err);
    if (*calib) return cmd_calibrate(c, out, err);
    if (*eval) {
      c.methods = eval_methods;
      return cmd_evaluate(c, out);
    }
    if (*synth) return cmd_synth(c, out);
    if (*report) return cmd_report(c, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.category());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(ErrorCategory::kIo);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace mdood
