#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mdood/gaussian.hpp"
#include "mdood/manifest.hpp"
#include "mdood/metrics.hpp"
#include "mdood/patchwork.hpp"
#include "mdood/report.hpp"

namespace mdood {

enum class Method { kMahalanobis, kMaxSoftmax, kTempScaling, kKlUniform, kEnergy, kSampleSpread };

const char* to_string(Method method);
std::optional<Method> parse_method(std::string_view name);
std::vector<Method> all_methods();
bool uses_temperature(Method method);

// Score-cache key: "energy@T=10" etc.
std::string score_key(Method method, std::optional<double> temperature = std::nullopt);

struct ExperimentOptions {
  std::size_t budget = kDefaultDimensionBudget;
  double sigma_scale = kDefaultSigmaScale;
  double eps_scale = kDefaultEpsScale;
  std::vector<double> temperatures{1.0, 10.0, 100.0};
  std::size_t esce_bins = kDefaultEsceBins;
  double dice_cut = kDefaultDiceCut;
  std::size_t workers = 0;
  std::optional<std::filesystem::path> mask_dir;
};

struct FitSummary {
  std::size_t n_samples = 0;
  std::size_t dim = 0;
  double eps = 0.0;
  int pool_steps = 0;
  double seconds = 0.0;
};

// Projects every patch feature of the training subjects and fits the
// Gaussian. Throws ValidationError when there are no training subjects.
GaussianModel fit_from_manifest(const std::vector<SubjectManifest>& subjects,
                                const ExperimentOptions& options, FitSummary* summary = nullptr);

// Raw subject-level distance score: project each patch, score it, blend the
// patch scores into a mask and average.
UncertaintyMask score_subject(const SubjectManifest& subject, const GaussianModel& model,
                              const ExperimentOptions& options);

// Raw scores of every subject for every requested method. A method whose
// inputs are missing or invalid is dropped and listed in `failures`; other
// methods continue. The distance method needs `model`; its tap must match
// the manifest (TapMismatch otherwise).
ScoreTable score_subjects(const std::vector<SubjectManifest>& subjects,
                          const std::vector<Method>& methods, const GaussianModel* model,
                          const ExperimentOptions& options);

// Normalisation bounds and tau per score key. Keys that cannot be
// calibrated (no train scores, constant scores) throw, or are skipped and
// listed in `failures` when it is given.
std::vector<CalibrationEntry> calibrate(const ScoreTable& scores,
                                        std::vector<MethodFailure>* failures = nullptr);

// Computes one report per method. For temperature-swept methods the
// variant with the lowest ESCE is reported.
std::vector<EvalReport> evaluate(const std::vector<SubjectManifest>& subjects,
                                 const ScoreTable& scores, const std::vector<Method>& methods,
                                 const ExperimentOptions& options);

void write_fit_summary(const FitSummary& summary, const GaussianModel& model,
                       const std::filesystem::path& path);

// fit -> score -> calibrate -> evaluate, writing every artifact into
// `out_dir`.
std::vector<EvalReport> run_experiment(const std::filesystem::path& manifest_path,
                                       const std::vector<Method>& methods,
                                       const std::filesystem::path& out_dir,
                                       const ExperimentOptions& options = {});

}  // namespace mdood
