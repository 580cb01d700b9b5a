#include "mdood/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "mdood/baselines.hpp"
#include "mdood/errors.hpp"
#include "mdood/mahalanobis.hpp"
#include "mdood/parallel.hpp"

namespace mdood {

namespace fs = std::filesystem;

const char* to_string(Method method) {
  switch (method) {
    case Method::kMahalanobis: return "mahalanobis";
    case Method::kMaxSoftmax: return "max_softmax";
    case Method::kTempScaling: return "temp_scaling";
    case Method::kKlUniform: return "kl_uniform";
    case Method::kEnergy: return "energy";
    case Method::kSampleSpread: return "sample_spread";
  }
  return "?";
}

std::vector<Method> all_methods() {
  return {Method::kMahalanobis, Method::kMaxSoftmax, Method::kTempScaling,
          Method::kKlUniform,   Method::kEnergy,     Method::kSampleSpread};
}

std::optional<Method> parse_method(std::string_view name) {
  for (Method m : all_methods()) {
    if (name == to_string(m)) return m;
  }
  return std::nullopt;
}

bool uses_temperature(Method method) {
  return method == Method::kTempScaling || method == Method::kEnergy;
}

std::string score_key(Method method, std::optional<double> temperature) {
  std::string key = to_string(method);
  if (temperature) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "@T=%g", *temperature);
    key += buf;
  }
  return key;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<PatchFile> sorted(std::vector<PatchFile> files) {
  std::sort(files.begin(), files.end(),
            [](const PatchFile& a, const PatchFile& b) { return a.patch_index < b.patch_index; });
  return files;
}

std::vector<ProjectedFeature> project_subject(const SubjectManifest& s, std::size_t budget) {
  std::vector<ProjectedFeature> out;
  for (const auto& f : sorted(s.feature_files)) out.push_back(project(read_tensor(f.path), budget));
  return out;
}

std::vector<Tensor> read_patches(const std::vector<PatchFile>& files) {
  std::vector<Tensor> out;
  for (const auto& f : sorted(files)) out.push_back(read_tensor(f.path));
  return out;
}

struct KeySpec {
  Method method;
  std::optional<double> temperature;
  std::string key;
};

std::vector<KeySpec> key_specs(const std::vector<Method>& methods,
                               const std::vector<double>& temperatures) {
  std::vector<KeySpec> keys;
  for (Method m : methods) {
    if (uses_temperature(m)) {
      for (double t : temperatures) keys.push_back({m, t, score_key(m, t)});
    } else {
      keys.push_back({m, std::nullopt, score_key(m)});
    }
  }
  return keys;
}

// Score with the mask kept, importance precomputed.
UncertaintyMask distance_mask(const SubjectManifest& subject, const GaussianModel& model,
                              const PatchGrid& grid, const ImportanceMap& importance,
                              std::size_t budget) {
  ensure_tap(model, subject.feature_tap);
  const auto features = project_subject(subject, budget);
  std::vector<double> scores;
  try {
    scores = batch_mahalanobis(features, model, 1);
  } catch (const ElementError& e) {
    throw Error(e.category(), "patch " + std::to_string(e.index()) + " of subject '" +
                                  subject.subject_id + "': " + e.what());
  }
  return aggregate(grid, scores, importance, subject.subject_id);
}

std::string subject_error(const SubjectManifest& s, const std::exception& e) {
  return "subject '" + s.subject_id + "': " + e.what();
}

}  // namespace

GaussianModel fit_from_manifest(const std::vector<SubjectManifest>& subjects,
                                const ExperimentOptions& options, FitSummary* summary) {
  const auto start = Clock::now();
  std::vector<const PatchFile*> files;
  std::vector<std::vector<PatchFile>> ordered;
  std::string tap;
  for (const auto& s : subjects) {
    if (s.role != Role::kTrain) continue;
    if (tap.empty()) tap = s.feature_tap;
    ordered.push_back(sorted(s.feature_files));
  }
  if (ordered.empty()) throw ValidationError("manifest has no train subjects to fit on");
  for (const auto& v : ordered)
    for (const auto& f : v) files.push_back(&f);

  std::vector<ProjectedFeature> features(files.size());
  parallel_for(files.size(), options.workers, [&](std::size_t i) {
    features[i] = project(read_tensor(files[i]->path), options.budget);
  });
  for (std::size_t i = 1; i < features.size(); ++i) {
    if (features[i].dim() != features[0].dim() ||
        features[i].pool_steps != features[0].pool_steps) {
      throw DimensionMismatch("train feature " + files[i]->path.string() + " projects to d=" +
                              std::to_string(features[i].dim()) + " after " +
                              std::to_string(features[i].pool_steps) + " pooling steps, expected d=" +
                              std::to_string(features[0].dim()) + " after " +
                              std::to_string(features[0].pool_steps));
    }
  }

  FitOptions fit_opts;
  fit_opts.eps_scale = options.eps_scale;
  fit_opts.workers = options.workers;
  fit_opts.feature_tap = tap;
  fit_opts.pool_steps = features.front().pool_steps;
  GaussianModel model = fit(std::span<const ProjectedFeature>(features), fit_opts);
  if (summary) {
    summary->n_samples = model.n_samples;
    summary->dim = model.dim;
    summary->eps = model.eps;
    summary->pool_steps = model.pool_steps;
    summary->seconds = std::chrono::duration<double>(Clock::now() - start).count();
  }
  return model;
}

UncertaintyMask score_subject(const SubjectManifest& subject, const GaussianModel& model,
                              const ExperimentOptions& options) {
  const PatchGrid grid = make_grid(subject.image_shape, subject.patch_size);
  const ImportanceMap importance = gaussian_importance(subject.patch_size, options.sigma_scale);
  return distance_mask(subject, model, grid, importance, options.budget);
}

ScoreTable score_subjects(const std::vector<SubjectManifest>& subjects,
                          const std::vector<Method>& methods, const GaussianModel* model,
                          const ExperimentOptions& options) {
  const auto keys = key_specs(methods, options.temperatures);
  const bool want = [&] {
    return std::find(methods.begin(), methods.end(), Method::kMahalanobis) != methods.end();
  }();
  if (want && model) {
    for (const auto& s : subjects) ensure_tap(*model, s.feature_tap);
  }
  if (options.mask_dir) fs::create_directories(*options.mask_dir);

  const std::size_t ns = subjects.size();
  const std::size_t nk = keys.size();
  std::vector<double> values(ns * nk, 0.0);
  // First error per (subject, method).
  std::vector<std::map<Method, std::string>> errors(ns);

  std::map<std::pair<Shape, Shape>, ImportanceMap> importance;
  for (const auto& s : subjects) {
    auto key = std::make_pair(s.image_shape, s.patch_size);
    if (!importance.count(key)) {
      importance.emplace(key, gaussian_importance(s.patch_size, options.sigma_scale));
    }
  }

  parallel_for(ns, options.workers, [&](std::size_t i) {
    const SubjectManifest& s = subjects[i];
    const PatchGrid grid = make_grid(s.image_shape, s.patch_size);
    const ImportanceMap& imp = importance.at({s.image_shape, s.patch_size});
    auto fail = [&](Method m, const std::exception& e) {
      errors[i].emplace(m, subject_error(s, e));
    };

    std::optional<LogitVolume> logits;
    bool logits_tried = false;
    std::optional<SampleSet> samples;
    bool samples_tried = false;

    for (std::size_t k = 0; k < nk; ++k) {
      const KeySpec& spec = keys[k];
      if (errors[i].count(spec.method)) continue;
      double& out = values[i * nk + k];
      try {
        switch (spec.method) {
          case Method::kMahalanobis: {
            if (!model) throw ValidationError("no fitted model available");
            UncertaintyMask mask = distance_mask(s, *model, grid, imp, options.budget);
            out = subject_score(mask);
            if (options.mask_dir) write_tensor(mask.values, *options.mask_dir / (s.subject_id + ".mht"));
            break;
          }
          case Method::kSampleSpread: {
            if (!samples_tried) {
              samples_tried = true;
              const std::size_t k_samples = s.num_samples();
              if (k_samples < 2) throw ValidationError("no prediction samples in manifest");
              SampleSet set;
              set.subject_id = s.subject_id;
              for (std::size_t j = 0; j < k_samples; ++j) {
                std::vector<PatchFile> files;
                for (const auto& f : s.sample_prediction_files) {
                  if (f.sample_index == j) files.push_back({f.patch_index, f.path});
                }
                auto patches = read_patches(files);
                set.samples.push_back(stitch(grid, patches, imp));
              }
              samples = std::move(set);
            }
            out = sample_spread_uncertainty(*samples);
            break;
          }
          default: {
            if (!logits_tried) {
              logits_tried = true;
              if (s.logit_files.empty()) throw ValidationError("no logit files in manifest");
              auto patches = read_patches(s.logit_files);
              logits = LogitVolume{stitch(grid, patches, imp), s.subject_id};
            }
            if (!logits) throw ValidationError("logits unavailable");
            if (spec.method == Method::kMaxSoftmax) {
              out = max_softmax_uncertainty(*logits);
            } else if (spec.method == Method::kTempScaling) {
              out = temperature_scaled_uncertainty(*logits, *spec.temperature);
            } else if (spec.method == Method::kKlUniform) {
              out = kl_from_uniform_uncertainty(*logits);
            } else {
              out = energy_uncertainty(*logits, *spec.temperature);
            }
            break;
          }
        }
      } catch (const TapMismatch&) {
        throw;
      } catch (const Error& e) {
        fail(spec.method, e);
      } catch (const fs::filesystem_error& e) {
        fail(spec.method, e);
      }
    }
  });

  ScoreTable table;
  std::map<Method, std::string> failed;
  for (std::size_t i = 0; i < ns; ++i) {
    for (const auto& [m, msg] : errors[i]) failed.emplace(m, msg);
  }
  for (Method m : methods) {
    auto it = failed.find(m);
    if (it != failed.end()) table.failures.push_back({to_string(m), it->second});
  }
  for (std::size_t k = 0; k < nk; ++k) {
    if (failed.count(keys[k].method)) continue;
    for (std::size_t i = 0; i < ns; ++i) {
      table.records.push_back({subjects[i].subject_id, subjects[i].role, subjects[i].dataset_tag,
                               keys[k].key, values[i * nk + k]});
    }
  }
  return table;
}

namespace {

CalibrationEntry calibrate_key(const ScoreTable& scores, const std::string& key) {
  std::vector<double> train;
  for (const auto& r : scores.records) {
    if (r.key == key && r.role == Role::kTrain) train.push_back(r.raw);
  }
  if (train.empty()) throw ValidationError("no train scores for '" + key + "'");
  const ScoreNormalizer norm(train);
  std::vector<double> u(train.size());
  std::transform(train.begin(), train.end(), u.begin(), norm);
  const Threshold t = tpr95_threshold(u);
  return {key, norm.train_min(), norm.train_max(), t.value, t.n, t.degenerate};
}

std::string method_of(const std::string& key) { return key.substr(0, key.find('@')); }

std::optional<double> temperature_of(const std::string& key) {
  const auto pos = key.find("@T=");
  if (pos == std::string::npos) return std::nullopt;
  return std::stod(key.substr(pos + 3));
}

EvalReport evaluate_key(const ScoreTable& scores, const std::string& key,
                        const std::map<std::string, double>& dice_by_subject,
                        const ExperimentOptions& options) {
  EvalReport r;
  r.method = method_of(key);
  r.temperature = temperature_of(key);
  r.dice_cut = options.dice_cut;

  const CalibrationEntry cal = calibrate_key(scores, key);
  const ScoreNormalizer norm(cal.train_min, cal.train_max);
  r.threshold = cal.tau;
  r.threshold_degenerate = cal.degenerate;
  r.train_min = cal.train_min;
  r.train_max = cal.train_max;
  if (cal.degenerate) {
    r.notes.push_back("threshold taken from fewer than " + std::to_string(kMinThresholdSamples) +
                      " training scores (maximum used)");
  }

  std::vector<double> id_u, ood_u;
  std::vector<ScoredSubject> eval_rows;
  for (const auto& rec : scores.records) {
    if (rec.key != key) continue;
    ScoredSubject s;
    s.subject_id = rec.subject_id;
    s.role = rec.role;
    s.dataset_tag = rec.dataset_tag;
    s.method = r.method;
    s.raw_score = rec.raw;
    s.uncertainty = norm(rec.raw);
    if (auto it = dice_by_subject.find(rec.subject_id); it != dice_by_subject.end()) {
      s.dice = it->second;
    }
    switch (rec.role) {
      case Role::kTrain: ++r.n_train; break;
      case Role::kIdTest: ++r.n_id_test; id_u.push_back(s.uncertainty); break;
      case Role::kOod: ++r.n_ood; ood_u.push_back(s.uncertainty); break;
    }
    if (rec.role != Role::kTrain && s.dice) eval_rows.push_back(s);
    r.rows.push_back(std::move(s));
  }

  if (!id_u.empty()) r.tpr = accepted_fraction(id_u, r.threshold);
  else r.notes.push_back("no id_test subjects: TPR omitted");
  if (!ood_u.empty()) {
    r.fpr = fpr(ood_u, r.threshold);
  } else {
    r.notes.push_back("no ood subjects: FPR, detection error and AUROC omitted");
  }
  if (!id_u.empty() && !ood_u.empty()) {
    r.detection_error = detection_error(id_u, ood_u, r.threshold);
    r.auroc = auroc(id_u, ood_u);
  }

  const std::size_t n_eval = r.n_id_test + r.n_ood;
  if (!eval_rows.empty()) {
    r.esce = esce(eval_rows, options.esce_bins);
    r.quadrants = quadrant_report(eval_rows, r.threshold, options.dice_cut);
    if (eval_rows.size() < n_eval) {
      r.notes.push_back(std::to_string(n_eval - eval_rows.size()) +
                        " evaluation subjects lack Dice and are excluded from ESCE and quadrants");
    }
  } else if (n_eval > 0) {
    r.notes.push_back("no Dice available: ESCE and quadrants omitted");
  }
  return r;
}

}  // namespace

std::vector<CalibrationEntry> calibrate(const ScoreTable& scores,
                                        std::vector<MethodFailure>* failures) {
  std::vector<CalibrationEntry> out;
  for (const auto& key : scores.keys()) {
    try {
      out.push_back(calibrate_key(scores, key));
    } catch (const Error& e) {
      if (!failures) throw;
      failures->push_back({key, e.what()});
    }
  }
  return out;
}

std::vector<EvalReport> evaluate(const std::vector<SubjectManifest>& subjects,
                                 const ScoreTable& scores, const std::vector<Method>& methods,
                                 const ExperimentOptions& options) {
  std::vector<std::optional<double>> dice_values(subjects.size());
  parallel_for(subjects.size(), options.workers, [&](std::size_t i) {
    const auto& s = subjects[i];
    if (s.prediction_path && s.ground_truth_path) {
      dice_values[i] = dice(read_tensor(*s.prediction_path), read_tensor(*s.ground_truth_path));
    }
  });
  std::map<std::string, double> dice_by_subject;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (dice_values[i]) dice_by_subject[subjects[i].subject_id] = *dice_values[i];
  }

  const auto keys = scores.keys();
  std::vector<EvalReport> reports;
  for (Method m : methods) {
    const std::string name = to_string(m);
    EvalReport failed;
    failed.method = name;
    auto f = std::find_if(scores.failures.begin(), scores.failures.end(),
                          [&](const MethodFailure& x) { return x.method == name; });
    if (f != scores.failures.end()) {
      failed.error = f->message;
      reports.push_back(std::move(failed));
      continue;
    }

    std::vector<EvalReport> candidates;
    std::vector<std::string> candidate_errors;
    for (const auto& key : keys) {
      if (method_of(key) != name) continue;
      try {
        candidates.push_back(evaluate_key(scores, key, dice_by_subject, options));
      } catch (const Error& e) {
        candidate_errors.push_back(key + ": " + e.what());
      }
    }
    if (candidates.empty()) {
      failed.error = candidate_errors.empty() ? "no scores for method '" + name + "'"
                                              : candidate_errors.front();
      reports.push_back(std::move(failed));
      continue;
    }

    std::size_t best = 0;
    if (uses_temperature(m)) {
      std::vector<std::pair<double, std::optional<double>>> sweep;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        sweep.emplace_back(candidates[i].temperature.value_or(1.0), candidates[i].esce);
        const auto& e = candidates[i].esce;
        const auto& b = candidates[best].esce;
        if (e && (!b || *e < *b)) best = i;
      }
      EvalReport chosen = std::move(candidates[best]);
      chosen.sweep = std::move(sweep);
      if (!chosen.esce) chosen.notes.push_back("ESCE unavailable: first temperature kept");
      for (const auto& err : candidate_errors) chosen.notes.push_back("skipped " + err);
      reports.push_back(std::move(chosen));
    } else {
      reports.push_back(std::move(candidates.front()));
    }
  }
  return reports;
}

void write_fit_summary(const FitSummary& s, const GaussianModel& model, const fs::path& path) {
  nlohmann::json j = {{"n_samples", s.n_samples}, {"dim", s.dim},
                      {"eps", s.eps},             {"eps_scale", model.eps_scale},
                      {"pool_steps", s.pool_steps}, {"feature_tap", model.feature_tap},
                      {"seconds", s.seconds}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<EvalReport> run_experiment(const fs::path& manifest_path,
                                       const std::vector<Method>& methods, const fs::path& out_dir,
                                       const ExperimentOptions& options) {
  const auto subjects = load_manifest(manifest_path);
  fs::create_directories(out_dir);

  std::optional<GaussianModel> model;
  std::optional<MethodFailure> fit_failure;
  if (std::find(methods.begin(), methods.end(), Method::kMahalanobis) != methods.end()) {
    try {
      FitSummary summary;
      model = fit_from_manifest(subjects, options, &summary);
      save_model(*model, out_dir / "model.mdm");
      write_fit_summary(summary, *model, out_dir / "fit_summary.json");
      record_artifacts(out_dir, "fit", {out_dir / "model.mdm", out_dir / "fit_summary.json"});
    } catch (const Error& e) {
      fit_failure = MethodFailure{to_string(Method::kMahalanobis), std::string("fit: ") + e.what()};
    }
  }

  ScoreTable scores = score_subjects(subjects, methods, model ? &*model : nullptr, options);
  if (fit_failure) {
    auto& f = scores.failures;
    auto it = std::find_if(f.begin(), f.end(),
                           [&](const MethodFailure& x) { return x.method == fit_failure->method; });
    if (it != f.end()) *it = *fit_failure;
    else f.push_back(*fit_failure);
  }
  write_scores(scores, out_dir);
  std::vector<fs::path> score_files{out_dir / "scores.csv", out_dir / "score_errors.json"};
  if (options.mask_dir) score_files.push_back(*options.mask_dir);
  record_artifacts(out_dir, "score", score_files);

  // Keys that fail here are reported per method by evaluate().
  std::vector<MethodFailure> cal_failures;
  const auto cal = calibrate(scores, &cal_failures);
  write_calibration(cal, out_dir / "calibration.json");
  record_artifacts(out_dir, "calibrate", {out_dir / "calibration.json"});

  auto reports = evaluate(subjects, scores, methods, options);
  write_reports(reports, out_dir / "report.jsonl");
  write_subject_table(reports, out_dir / "subjects.csv");
  record_artifacts(out_dir, "evaluate", {out_dir / "report.jsonl", out_dir / "subjects.csv"});
  return reports;
}

}  // namespace mdood
