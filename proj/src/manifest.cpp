#include "mdood/manifest.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mdood/patchwork.hpp"

namespace mdood {

using nlohmann::json;

const char* to_string(Role role) {
  switch (role) {
    case Role::kTrain:
      return "train";
    case Role::kIdTest:
      return "id_test";
    case Role::kOod:
      return "ood";
  }
  return "?";
}

std::optional<Role> parse_role(std::string_view text) {
  if (text == "train") return Role::kTrain;
  if (text == "id_test") return Role::kIdTest;
  if (text == "ood") return Role::kOod;
  return std::nullopt;
}

std::size_t SubjectManifest::num_samples() const {
  std::set<std::size_t> ids;
  for (const auto& s : sample_prediction_files) ids.insert(s.sample_index);
  return ids.size();
}

const char* to_string(ManifestError::Kind kind) {
  switch (kind) {
    case ManifestError::Kind::kSyntax:
      return "Syntax";
    case ManifestError::Kind::kMissingField:
      return "MissingField";
    case ManifestError::Kind::kBadValue:
      return "BadValue";
    case ManifestError::Kind::kDuplicateSubject:
      return "DuplicateSubject";
    case ManifestError::Kind::kMissingPatch:
      return "MissingPatch";
    case ManifestError::Kind::kDuplicatePatch:
      return "DuplicatePatch";
    case ManifestError::Kind::kPatchOutOfRange:
      return "PatchOutOfRange";
    case ManifestError::Kind::kMixedTap:
      return "MixedTap";
    case ManifestError::Kind::kMissingFile:
      return "MissingFile";
  }
  return "?";
}

ManifestError::ManifestError(Kind kind, std::string subject_id, const std::string& detail,
                             std::optional<std::size_t> patch_index)
    : ValidationError(std::string(to_string(kind)) +
                      (patch_index ? "(" + std::to_string(*patch_index) + ")" : "") +
                      " in subject '" + subject_id + "': " + detail),
      kind_(kind),
      subject_id_(std::move(subject_id)),
      patch_index_(patch_index) {}

namespace {

using Kind = ManifestError::Kind;

Shape parse_shape(const json& j, const std::string& field, const std::string& sid) {
  if (!j.contains(field)) throw ManifestError(Kind::kMissingField, sid, "missing '" + field + "'");
  const json& v = j.at(field);
  if (!v.is_array() || v.empty()) {
    throw ManifestError(Kind::kBadValue, sid, "'" + field + "' must be a non-empty array");
  }
  Shape shape;
  for (const json& e : v) {
    if (!e.is_number_unsigned() || e.get<std::uint64_t>() == 0) {
      throw ManifestError(Kind::kBadValue, sid, "'" + field + "' extents must be positive integers");
    }
    shape.push_back(e.get<std::size_t>());
  }
  return shape;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::size_t get_index(const json& e, const char* key, const std::string& sid) {
  if (!e.contains(key) || !e.at(key).is_number_unsigned()) {
    throw ManifestError(Kind::kBadValue, sid,
                        std::string("entry needs a non-negative integer '") + key + "'");
  }
  return e.at(key).get<std::size_t>();
}

std::string get_path(const json& e, const std::string& sid) {
  if (!e.contains("path") || !e.at("path").is_string()) {
    throw ManifestError(Kind::kBadValue, sid, "entry needs a string 'path'");
  }
  return e.at("path").get<std::string>();
}

std::vector<PatchFile> parse_patch_files(const json& j, const char* field,
                                         const std::filesystem::path& base,
                                         const std::string& sid) {
  std::vector<PatchFile> out;
  if (!j.contains(field)) return out;
  const json& arr = j.at(field);
  if (!arr.is_array()) throw ManifestError(Kind::kBadValue, sid, std::string("'") + field + "' must be an array");
  for (const json& e : arr) {
    if (!e.is_object()) throw ManifestError(Kind::kBadValue, sid, std::string("'") + field + "' entries must be objects");
    out.push_back({get_index(e, "patch", sid), resolve(base, get_path(e, sid))});
  }
  return out;
}

SubjectManifest parse_record(const json& j, const std::filesystem::path& base) {
  if (!j.is_object()) throw ManifestError(Kind::kSyntax, "?", "record is not a JSON object");
  if (!j.contains("subject_id") || !j.at("subject_id").is_string()) {
    throw ManifestError(Kind::kMissingField, "?", "missing string 'subject_id'");
  }
  SubjectManifest m;
  m.subject_id = j.at("subject_id").get<std::string>();
  const std::string& sid = m.subject_id;

  if (!j.contains("role") || !j.at("role").is_string()) {
    throw ManifestError(Kind::kMissingField, sid, "missing string 'role'");
  }
  const auto role = parse_role(j.at("role").get<std::string>());
  if (!role) {
    throw ManifestError(Kind::kBadValue, sid,
                        "role must be train, id_test or ood, got '" +
                            j.at("role").get<std::string>() + "'");
  }
  m.role = *role;

  if (j.contains("dataset_tag")) {
    if (!j.at("dataset_tag").is_string()) throw ManifestError(Kind::kBadValue, sid, "'dataset_tag' must be a string");
    m.dataset_tag = j.at("dataset_tag").get<std::string>();
  }
  if (!j.contains("feature_tap") || !j.at("feature_tap").is_string()) {
    throw ManifestError(Kind::kMissingField, sid, "missing string 'feature_tap'");
  }
  m.feature_tap = j.at("feature_tap").get<std::string>();

  m.image_shape = parse_shape(j, "image_shape", sid);
  m.patch_size = parse_shape(j, "patch_size", sid);

  if (!j.contains("features")) throw ManifestError(Kind::kMissingField, sid, "missing 'features'");
  m.feature_files = parse_patch_files(j, "features", base, sid);
  m.logit_files = parse_patch_files(j, "logits", base, sid);

  if (j.contains("samples")) {
    const json& arr = j.at("samples");
    if (!arr.is_array()) throw ManifestError(Kind::kBadValue, sid, "'samples' must be an array");
    for (const json& e : arr) {
      if (!e.is_object()) throw ManifestError(Kind::kBadValue, sid, "'samples' entries must be objects");
      m.sample_prediction_files.push_back(
          {get_index(e, "sample", sid), get_index(e, "patch", sid), resolve(base, get_path(e, sid))});
    }
  }
  for (const char* key : {"ground_truth", "prediction"}) {
    if (!j.contains(key)) continue;
    if (!j.at(key).is_string()) {
      throw ManifestError(Kind::kBadValue, sid, std::string("'") + key + "' must be a string");
    }
    auto p = resolve(base, j.at(key).get<std::string>());
    (std::string_view(key) == "ground_truth" ? m.ground_truth_path : m.prediction_path) = std::move(p);
  }
  return m;
}

// Patch indices must form exactly {0, ..., n-1}.
void check_dense(const std::vector<std::size_t>& indices, std::size_t n, const std::string& sid,
                 const std::string& what) {
  std::vector<bool> seen(n, false);
  for (std::size_t i : indices) {
    if (i >= n) {
      throw ManifestError(Kind::kPatchOutOfRange, sid,
                          what + " patch index beyond the " + std::to_string(n) + "-patch grid", i);
    }
    if (seen[i]) throw ManifestError(Kind::kDuplicatePatch, sid, what + " patch listed twice", i);
    seen[i] = true;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw ManifestError(Kind::kMissingPatch, sid, what + " patch missing", i);
  }
}

void check_file(const std::filesystem::path& p, const std::string& sid,
                std::optional<std::size_t> patch = std::nullopt) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(p, ec)) {
    throw ManifestError(Kind::kMissingFile, sid, "referenced file '" + p.string() + "' does not exist",
                        patch);
  }
}

void validate_subject(const SubjectManifest& m, const ManifestLoadOptions& options) {
  const std::string& sid = m.subject_id;
  if (m.image_shape.size() != m.patch_size.size()) {
    throw ManifestError(Kind::kBadValue, sid, "image_shape and patch_size ranks differ");
  }
  if (m.image_shape.size() > 4) {
    throw ManifestError(Kind::kBadValue, sid, "spatial rank must be at most 4");
  }
  const std::size_t n = make_grid(m.image_shape, m.patch_size).num_patches();

  std::vector<std::size_t> idx;
  for (const auto& f : m.feature_files) idx.push_back(f.patch_index);
  check_dense(idx, n, sid, "feature");

  if (!m.logit_files.empty()) {
    idx.clear();
    for (const auto& f : m.logit_files) idx.push_back(f.patch_index);
    check_dense(idx, n, sid, "logit");
  }

  if (!m.sample_prediction_files.empty()) {
    std::map<std::size_t, std::vector<std::size_t>> by_sample;
    for (const auto& s : m.sample_prediction_files) by_sample[s.sample_index].push_back(s.patch_index);
    if (by_sample.size() < 2) {
      throw ManifestError(Kind::kBadValue, sid, "sample sets need at least two samples");
    }
    std::size_t expected = 0;
    for (const auto& [sample, patches] : by_sample) {
      if (sample != expected++) {
        throw ManifestError(Kind::kBadValue, sid,
                            "sample indices must be dense from 0, missing " +
                                std::to_string(expected - 1));
      }
      check_dense(patches, n, sid, "sample " + std::to_string(sample));
    }
  }

  if (options.check_files) {
    for (const auto& f : m.feature_files) check_file(f.path, sid, f.patch_index);
    for (const auto& f : m.logit_files) check_file(f.path, sid, f.patch_index);
    for (const auto& s : m.sample_prediction_files) check_file(s.path, sid, s.patch_index);
    if (m.ground_truth_path) check_file(*m.ground_truth_path, sid);
    if (m.prediction_path) check_file(*m.prediction_path, sid);
  }
}

}  // namespace

void validate_manifest(const std::vector<SubjectManifest>& subjects,
                       const ManifestLoadOptions& options) {
  std::set<std::string> ids;
  for (const auto& m : subjects) {
    if (!ids.insert(m.subject_id).second) {
      throw ManifestError(Kind::kDuplicateSubject, m.subject_id, "subject listed twice");
    }
    validate_subject(m, options);
    if (m.feature_tap != subjects.front().feature_tap) {
      throw ManifestError(Kind::kMixedTap, m.subject_id,
                          "feature tap '" + m.feature_tap + "' differs from '" +
                              subjects.front().feature_tap + "' used by '" +
                              subjects.front().subject_id + "'");
    }
  }
}

std::vector<SubjectManifest> parse_manifest(std::string_view text,
                                            const std::filesystem::path& base_dir,
                                            const ManifestLoadOptions& options) {
  std::vector<SubjectManifest> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ManifestError(Kind::kSyntax, "?",
                          "line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(parse_record(j, base_dir));
  }
  validate_manifest(out, options);
  return out;
}

std::vector<SubjectManifest> load_manifest(const std::filesystem::path& path,
                                           const ManifestLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path(), options);
}

namespace {

std::string relative_to(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (base.empty()) return p.generic_string();
  auto rel = std::filesystem::proximate(p, base);
  return rel.generic_string();
}

}  // namespace

void write_manifest(const std::vector<SubjectManifest>& subjects,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest '" + path.string() + "' for writing");
  const auto base = path.parent_path();
  for (const auto& m : subjects) {
    json j;
    j["subject_id"] = m.subject_id;
    j["role"] = to_string(m.role);
    j["dataset_tag"] = m.dataset_tag;
    j["feature_tap"] = m.feature_tap;
    j["image_shape"] = m.image_shape;
    j["patch_size"] = m.patch_size;
    j["features"] = json::array();
    for (const auto& f : m.feature_files) {
      j["features"].push_back({{"patch", f.patch_index}, {"path", relative_to(f.path, base)}});
    }
    if (!m.logit_files.empty()) {
      j["logits"] = json::array();
      for (const auto& f : m.logit_files) {
        j["logits"].push_back({{"patch", f.patch_index}, {"path", relative_to(f.path, base)}});
      }
    }
    if (!m.sample_prediction_files.empty()) {
      j["samples"] = json::array();
      for (const auto& s : m.sample_prediction_files) {
        j["samples"].push_back({{"sample", s.sample_index},
                                {"patch", s.patch_index},
                                {"path", relative_to(s.path, base)}});
      }
    }
    if (m.ground_truth_path) j["ground_truth"] = relative_to(*m.ground_truth_path, base);
    if (m.prediction_path) j["prediction"] = relative_to(*m.prediction_path, base);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing manifest '" + path.string() + "'");
}

}  // namespace mdood
