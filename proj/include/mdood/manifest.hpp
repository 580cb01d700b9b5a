#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mdood/errors.hpp"
#include "mdood/tensor.hpp"

namespace mdood {

enum class Role { kTrain, kIdTest, kOod };

const char* to_string(Role role);
std::optional<Role> parse_role(std::string_view text);

struct PatchFile {
  std::size_t patch_index = 0;
  std::filesystem::path path;
};

struct SampleFile {
  std::size_t sample_index = 0;
  std::size_t patch_index = 0;
  std::filesystem::path path;
};

// One subject record. Paths are resolved against the manifest's directory
// on load and written relative to it on save.
struct SubjectManifest {
  std::string subject_id;
  Role role = Role::kTrain;
  std::string dataset_tag;
  std::string feature_tap;
  Shape image_shape;
  Shape patch_size;
  std::vector<PatchFile> feature_files;
  std::vector<PatchFile> logit_files;
  std::vector<SampleFile> sample_prediction_files;
  std::optional<std::filesystem::path> ground_truth_path;
  std::optional<std::filesystem::path> prediction_path;

  std::size_t num_samples() const;
};

class ManifestError : public ValidationError {
 public:
  enum class Kind {
    kSyntax,
    kMissingField,
    kBadValue,
    kDuplicateSubject,
    kMissingPatch,
    kDuplicatePatch,
    kPatchOutOfRange,
    kMixedTap,
    kMissingFile,
  };

  ManifestError(Kind kind, std::string subject_id, const std::string& detail,
                std::optional<std::size_t> patch_index = std::nullopt);

  Kind kind() const { return kind_; }
  const std::string& subject_id() const { return subject_id_; }
  std::optional<std::size_t> patch_index() const { return patch_index_; }

 private:
  Kind kind_;
  std::string subject_id_;
  std::optional<std::size_t> patch_index_;
};

const char* to_string(ManifestError::Kind kind);

struct ManifestLoadOptions {
  // Verify that every referenced file exists.
  bool check_files = true;
};

// Parses a JSON-lines manifest (one subject object per line; blank lines and
// lines starting with '#' are skipped). Records keep file order.
std::vector<SubjectManifest> load_manifest(const std::filesystem::path& path,
                                           const ManifestLoadOptions& options = {});

// Parses manifest text; relative paths resolve against `base_dir`.
std::vector<SubjectManifest> parse_manifest(std::string_view text,
                                            const std::filesystem::path& base_dir,
                                            const ManifestLoadOptions& options = {});

// Checks every per-subject and cross-subject invariant.
void validate_manifest(const std::vector<SubjectManifest>& subjects,
                       const ManifestLoadOptions& options = {});

void write_manifest(const std::vector<SubjectManifest>& subjects,
                    const std::filesystem::path& path);

}  // namespace mdood
