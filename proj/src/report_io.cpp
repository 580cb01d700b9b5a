#include "mdood/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mdood/errors.hpp"

namespace mdood {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> ScoreTable::keys() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (seen.insert(r.key).second) out.push_back(r.key);
  }
  return out;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ValidationError("unterminated quote on line " + std::to_string(line_no));
  fields.push_back(std::move(cur));
  return fields;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

json opt(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

std::optional<double> get_opt(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

const char* quadrant_label(const ScoredSubject& s, double tau, double cut) {
  if (!s.dice) return "";
  const bool low = *s.dice < cut;
  const bool flagged = s.uncertainty > tau;
  if (low) return flagged ? "detected_failure" : "silent_failure";
  return flagged ? "flagged_good" : "accepted_good";
}

}  // namespace

void write_scores(const ScoreTable& table, const fs::path& dir) {
  const fs::path path = dir / "scores.csv";
  auto out = open_out(path);
  out << "subject_id,role,dataset_tag,key,raw_score\n";
  for (const auto& r : table.records) {
    out << csv_field(r.subject_id) << ',' << to_string(r.role) << ',' << csv_field(r.dataset_tag)
        << ',' << csv_field(r.key) << ',' << fmt_double(r.raw) << '\n';
  }
  finish(out, path);

  const fs::path fpath = dir / "score_errors.json";
  json failures = json::array();
  for (const auto& f : table.failures) failures.push_back({{"method", f.method}, {"error", f.message}});
  auto fout = open_out(fpath);
  fout << failures.dump(2) << '\n';
  finish(fout, fpath);
}

ScoreTable read_scores(const fs::path& dir) {
  ScoreTable table;
  const fs::path path = dir / "scores.csv";
  std::istringstream in(slurp(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    auto f = split_csv_line(line, line_no);
    if (f.size() != 5) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    }
    ScoreRecord r;
    r.subject_id = f[0];
    auto role = parse_role(f[1]);
    if (!role) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad role");
    r.role = *role;
    r.dataset_tag = f[2];
    r.key = f[3];
    char* end = nullptr;
    r.raw = std::strtod(f[4].c_str(), &end);
    if (f[4].empty() || *end != '\0') {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad score");
    }
    table.records.push_back(std::move(r));
  }

  const fs::path fpath = dir / "score_errors.json";
  if (fs::exists(fpath)) {
    try {
      for (const auto& f : json::parse(slurp(fpath))) {
        table.failures.push_back({f.at("method").get<std::string>(), f.at("error").get<std::string>()});
      }
    } catch (const json::exception& e) {
      throw ValidationError(fpath.string() + ": " + e.what());
    }
  }
  return table;
}

void write_calibration(const std::vector<CalibrationEntry>& entries, const fs::path& path) {
  json arr = json::array();
  for (const auto& e : entries) {
    arr.push_back({{"key", e.key},
                   {"train_min", e.train_min},
                   {"train_max", e.train_max},
                   {"tau", e.tau},
                   {"n_train", e.n_train},
                   {"degenerate", e.degenerate}});
  }
  auto out = open_out(path);
  out << arr.dump(2) << '\n';
  finish(out, path);
}

std::vector<CalibrationEntry> read_calibration(const fs::path& path) {
  std::vector<CalibrationEntry> entries;
  try {
    for (const auto& j : json::parse(slurp(path))) {
      CalibrationEntry e;
      e.key = j.at("key").get<std::string>();
      e.train_min = j.at("train_min").get<double>();
      e.train_max = j.at("train_max").get<double>();
      e.tau = j.at("tau").get<double>();
      e.n_train = j.at("n_train").get<std::size_t>();
      e.degenerate = j.at("degenerate").get<bool>();
      entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return entries;
}

void write_reports(const std::vector<EvalReport>& reports, const fs::path& path) {
  auto out = open_out(path);
  for (const auto& r : reports) {
    json j;
    j["method"] = r.method;
    j["temperature"] = opt(r.temperature);
    j["error"] = r.error ? json(*r.error) : json(nullptr);
    j["threshold"] = r.threshold;
    j["threshold_degenerate"] = r.threshold_degenerate;
    j["train_min"] = r.train_min;
    j["train_max"] = r.train_max;
    j["dice_cut"] = r.dice_cut;
    j["tpr"] = opt(r.tpr);
    j["fpr"] = opt(r.fpr);
    j["detection_error"] = opt(r.detection_error);
    j["auroc"] = opt(r.auroc);
    j["esce"] = opt(r.esce);
    if (r.quadrants) {
      j["quadrants"] = {{"silent_failures", r.quadrants->silent_failures},
                        {"detected_failures", r.quadrants->detected_failures},
                        {"accepted_good", r.quadrants->accepted_good},
                        {"flagged_good", r.quadrants->flagged_good}};
      j["n_silent_failures"] = r.quadrants->silent_failures;
    } else {
      j["quadrants"] = nullptr;
      j["n_silent_failures"] = nullptr;
    }
    j["n_train"] = r.n_train;
    j["n_id_test"] = r.n_id_test;
    j["n_ood"] = r.n_ood;
    json sweep = json::array();
    for (const auto& [t, e] : r.sweep) sweep.push_back({{"temperature", t}, {"esce", opt(e)}});
    j["sweep"] = sweep;
    j["notes"] = r.notes;
    out << j.dump() << '\n';
  }
  finish(out, path);
}

std::vector<EvalReport> read_reports(const fs::path& path) {
  std::vector<EvalReport> reports;
  std::istringstream in(slurp(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EvalReport r;
      r.method = j.at("method").get<std::string>();
      r.temperature = get_opt(j, "temperature");
      if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
      r.threshold = j.at("threshold").get<double>();
      r.threshold_degenerate = j.at("threshold_degenerate").get<bool>();
      r.train_min = j.at("train_min").get<double>();
      r.train_max = j.at("train_max").get<double>();
      r.dice_cut = j.at("dice_cut").get<double>();
      r.tpr = get_opt(j, "tpr");
      r.fpr = get_opt(j, "fpr");
      r.detection_error = get_opt(j, "detection_error");
      r.auroc = get_opt(j, "auroc");
      r.esce = get_opt(j, "esce");
      if (!j.at("quadrants").is_null()) {
        const json& q = j.at("quadrants");
        r.quadrants = QuadrantCounts{q.at("silent_failures").get<std::size_t>(),
                                     q.at("detected_failures").get<std::size_t>(),
                                     q.at("accepted_good").get<std::size_t>(),
                                     q.at("flagged_good").get<std::size_t>()};
      }
      r.n_train = j.at("n_train").get<std::size_t>();
      r.n_id_test = j.at("n_id_test").get<std::size_t>();
      r.n_ood = j.at("n_ood").get<std::size_t>();
      for (const auto& s : j.at("sweep")) {
        r.sweep.emplace_back(s.at("temperature").get<double>(), get_opt(s, "esce"));
      }
      r.notes = j.at("notes").get<std::vector<std::string>>();
      reports.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return reports;
}

void write_subject_table(const std::vector<EvalReport>& reports, const fs::path& path) {
  auto out = open_out(path);
  out << "method,subject_id,role,dataset_tag,raw_score,uncertainty,dice,flagged,quadrant\n";
  for (const auto& r : reports) {
    if (r.error) continue;
    for (const auto& s : r.rows) {
      out << csv_field(r.method) << ',' << csv_field(s.subject_id) << ',' << to_string(s.role)
          << ',' << csv_field(s.dataset_tag) << ',' << fmt_double(s.raw_score) << ','
          << fmt_double(s.uncertainty) << ',' << (s.dice ? fmt_double(*s.dice) : std::string())
          << ',' << (s.uncertainty > r.threshold ? 1 : 0) << ','
          << quadrant_label(s, r.threshold, r.dice_cut) << '\n';
    }
  }
  finish(out, path);
}

std::string format_report_table(const std::vector<EvalReport>& reports) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %6s %8s %8s %8s %8s %8s %8s %7s\n", "method", "T", "tau",
                "TPR", "FPR", "Error", "AUROC", "ESCE", "silent");
  os << line;
  std::vector<const EvalReport*> failed;
  for (const auto& r : reports) {
    if (r.error) {
      failed.push_back(&r);
      continue;
    }
    std::string t = "-";
    if (r.temperature) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%g", *r.temperature);
      t = buf;
    }
    std::snprintf(line, sizeof line, "%-14s %6s %8s %8s %8s %8s %8s %8s %7s\n", r.method.c_str(),
                  t.c_str(), cell(r.threshold).c_str(), cell(r.tpr).c_str(), cell(r.fpr).c_str(),
                  cell(r.detection_error).c_str(), cell(r.auroc).c_str(), cell(r.esce).c_str(),
                  r.quadrants ? std::to_string(r.quadrants->silent_failures).c_str() : "-");
    os << line;
  }
  for (const auto* r : failed) os << r->method << ": error: " << *r->error << '\n';
  for (const auto& r : reports) {
    for (const auto& n : r.notes) os << r.method << ": " << n << '\n';
  }
  return os.str();
}

void record_artifacts(const fs::path& run_dir, const std::string& step,
                      const std::vector<fs::path>& files) {
  const fs::path path = run_dir / "artifacts.json";
  json j = json::object();
  if (fs::exists(path)) {
    try {
      j = json::parse(slurp(path));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
  }
  json list = json::array();
  for (const auto& f : files) list.push_back(f.lexically_proximate(run_dir).generic_string());
  j["steps"][step] = list;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

}  // namespace mdood
