#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mdood/manifest.hpp"
#include "mdood/metrics.hpp"

namespace mdood {

// One raw subject-level score, as cached between `score` and `evaluate`.
struct ScoreRecord {
  std::string subject_id;
  Role role = Role::kTrain;
  std::string dataset_tag;
  std::string key;  // method name, plus "@T=<t>" for temperature variants
  double raw = 0.0;
};

struct MethodFailure {
  std::string method;
  std::string message;
};

struct ScoreTable {
  std::vector<ScoreRecord> records;
  std::vector<MethodFailure> failures;

  // Distinct keys in first-appearance order.
  std::vector<std::string> keys() const;
};

// Normalisation bounds and boundary derived from the training scores of one
// score key.
struct CalibrationEntry {
  std::string key;
  double train_min = 0.0;
  double train_max = 0.0;
  double tau = 0.0;  // on the normalised scale
  std::size_t n_train = 0;
  bool degenerate = false;
};

struct EvalReport {
  std::string method;
  std::optional<double> temperature;
  std::optional<std::string> error;

  double threshold = 0.0;
  bool threshold_degenerate = false;
  double train_min = 0.0;
  double train_max = 0.0;
  double dice_cut = kDefaultDiceCut;

  std::optional<double> tpr;
  std::optional<double> fpr;
  std::optional<double> detection_error;
  std::optional<double> auroc;
  std::optional<double> esce;
  std::optional<QuadrantCounts> quadrants;

  std::size_t n_train = 0;
  std::size_t n_id_test = 0;
  std::size_t n_ood = 0;

  // (temperature, ESCE) for every candidate of a temperature sweep.
  std::vector<std::pair<double, std::optional<double>>> sweep;
  std::vector<std::string> notes;
  std::vector<ScoredSubject> rows;

  std::size_t n_silent_failures() const { return quadrants ? quadrants->silent_failures : 0; }
};

// scores.csv: subject_id,role,dataset_tag,key,raw_score
void write_scores(const ScoreTable& table, const std::filesystem::path& dir);
ScoreTable read_scores(const std::filesystem::path& dir);

void write_calibration(const std::vector<CalibrationEntry>& entries,
                       const std::filesystem::path& path);
std::vector<CalibrationEntry> read_calibration(const std::filesystem::path& path);

// report.jsonl: one JSON object per method (rows excluded).
void write_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& path);
std::vector<EvalReport> read_reports(const std::filesystem::path& path);

// subjects.csv: one row per evaluated subject and method.
void write_subject_table(const std::vector<EvalReport>& reports, const std::filesystem::path& path);

// Plain-text summary table of the reports.
std::string format_report_table(const std::vector<EvalReport>& reports);

// Appends `files` (relative to `run_dir`) under `step` in artifacts.json.
void record_artifacts(const std::filesystem::path& run_dir, const std::string& step,
                      const std::vector<std::filesystem::path>& files);

}  // namespace mdood
