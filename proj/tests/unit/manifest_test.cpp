#include <gtest/gtest.h>

#include <fstream>

#include "mdood/manifest.hpp"
#include "mdood/patchwork.hpp"
#include "test_support.hpp"

using namespace mdood;
using testing_support::TempDir;

namespace {

void touch_tensor(const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
  write_tensor(Tensor(Shape{2}, std::vector<float>{1, 2}), p);
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// Record for a 1-D image of extent 7 with patch 4: three patches.
std::string record(const std::string& id, const std::string& role, const std::string& tap,
                   const std::vector<int>& patches) {
  std::string feats;
  for (int p : patches) {
    if (!feats.empty()) feats += ",";
    feats += "{\"patch\":" + std::to_string(p) + ",\"path\":\"" + id + "/f" + std::to_string(p) +
             ".mht\"}";
  }
  return "{\"subject_id\":\"" + id + "\",\"role\":\"" + role + "\",\"dataset_tag\":\"d\"," +
         "\"feature_tap\":\"" + tap + "\",\"image_shape\":[7],\"patch_size\":[4]," +
         "\"features\":[" + feats + "]}";
}

ManifestError::Kind kind_of(const std::string& text, const std::filesystem::path& base,
                            ManifestLoadOptions opts = {}) {
  try {
    parse_manifest(text, base, opts);
  } catch (const ManifestError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "manifest accepted:\n" << text;
  return ManifestError::Kind::kSyntax;
}

}  // namespace

TEST(Manifest, GoldenTwoSubjectFixture) {
  TempDir dir;
  for (const char* id : {"a", "b"})
    for (int p = 0; p < 3; ++p) touch_tensor(dir / (std::string(id) + "/f" + std::to_string(p) + ".mht"));
  touch_tensor(dir / "b/gt.mht");
  touch_tensor(dir / "b/pred.mht");
  std::string b = record("b", "ood", "6th-EB-conv", {2, 0, 1});
  b.pop_back();
  b += ",\"ground_truth\":\"b/gt.mht\",\"prediction\":\"b/pred.mht\"}";
  write_text(dir / "m.jsonl",
             "# comment line\n" + record("a", "train", "6th-EB-conv", {0, 1, 2}) + "\n\n" + b + "\n");

  const auto subjects = load_manifest(dir / "m.jsonl");
  ASSERT_EQ(subjects.size(), 2u);
  EXPECT_EQ(subjects[0].subject_id, "a");
  EXPECT_EQ(subjects[0].role, Role::kTrain);
  EXPECT_EQ(subjects[1].subject_id, "b");
  EXPECT_EQ(subjects[1].role, Role::kOod);
  EXPECT_EQ(subjects[1].feature_tap, "6th-EB-conv");
  EXPECT_EQ(subjects[1].dataset_tag, "d");
  EXPECT_EQ(subjects[1].image_shape, Shape{7});
  EXPECT_EQ(subjects[1].patch_size, Shape{4});
  ASSERT_EQ(subjects[1].feature_files.size(), 3u);
  EXPECT_EQ(subjects[1].feature_files[0].patch_index, 2u);
  EXPECT_EQ(subjects[1].feature_files[0].path, dir.path() / "b/f2.mht");
  EXPECT_EQ(*subjects[1].ground_truth_path, dir.path() / "b/gt.mht");
  EXPECT_EQ(*subjects[1].prediction_path, dir.path() / "b/pred.mht");
  EXPECT_FALSE(subjects[0].ground_truth_path.has_value());
  EXPECT_TRUE(subjects[0].logit_files.empty());
}

TEST(Manifest, WriteThenLoadRoundTrips) {
  TempDir dir;
  for (const char* id : {"a", "b"})
    for (int p = 0; p < 3; ++p) touch_tensor(dir / (std::string(id) + "/f" + std::to_string(p) + ".mht"));
  const auto first = parse_manifest(record("a", "train", "t", {0, 1, 2}) + "\n" +
                                        record("b", "id_test", "t", {0, 1, 2}),
                                    dir.path());
  write_manifest(first, dir / "out.jsonl");
  const auto second = load_manifest(dir / "out.jsonl");
  ASSERT_EQ(second.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(second[i].subject_id, first[i].subject_id);
    EXPECT_EQ(second[i].role, first[i].role);
    ASSERT_EQ(second[i].feature_files.size(), 3u);
    for (std::size_t p = 0; p < 3; ++p) {
      EXPECT_EQ(std::filesystem::weakly_canonical(second[i].feature_files[p].path),
                std::filesystem::weakly_canonical(first[i].feature_files[p].path));
    }
  }
  // Paths are stored relative to the manifest.
  EXPECT_EQ(testing_support::read_file(dir / "out.jsonl").find(dir.path().string()),
            std::string::npos);
}

TEST(Manifest, MissingPatchNamesIndexAndSubject) {
  TempDir dir;
  try {
    parse_manifest(record("s1", "train", "t", {0, 2}), dir.path(), {.check_files = false});
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_EQ(e.kind(), ManifestError::Kind::kMissingPatch);
    ASSERT_TRUE(e.patch_index());
    EXPECT_EQ(*e.patch_index(), 1u);
    EXPECT_EQ(e.subject_id(), "s1");
    const std::string msg = e.what();
    EXPECT_NE(msg.find("MissingPatch(1)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("s1"), std::string::npos) << msg;
  }
}

TEST(Manifest, MixedTap) {
  TempDir dir;
  const std::string text = record("a", "train", "6th-EB-conv", {0, 1, 2}) + "\n" +
                           record("b", "train", "1st-DB-conv", {0, 1, 2});
  try {
    parse_manifest(text, dir.path(), {.check_files = false});
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_EQ(e.kind(), ManifestError::Kind::kMixedTap);
    EXPECT_EQ(e.subject_id(), "b");
  }
}

TEST(Manifest, StructuralViolations) {
  TempDir dir;
  const ManifestLoadOptions no_files{.check_files = false};
  using K = ManifestError::Kind;
  EXPECT_EQ(kind_of(record("a", "train", "t", {0, 1, 2, 3}), dir.path(), no_files),
            K::kPatchOutOfRange);
  EXPECT_EQ(kind_of(record("a", "train", "t", {0, 1, 1, 2}), dir.path(), no_files),
            K::kDuplicatePatch);
  EXPECT_EQ(kind_of(record("a", "train", "t", {0, 1, 2}) + "\n" + record("a", "ood", "t", {0, 1, 2}),
                    dir.path(), no_files),
            K::kDuplicateSubject);
  EXPECT_EQ(kind_of(record("a", "validation", "t", {0, 1, 2}), dir.path(), no_files), K::kBadValue);
  EXPECT_EQ(kind_of("{\"subject_id\":\"a\"", dir.path(), no_files), K::kSyntax);
  EXPECT_EQ(kind_of("{\"subject_id\":\"a\",\"role\":\"train\"}", dir.path(), no_files),
            K::kMissingField);
  EXPECT_EQ(kind_of(record("a", "train", "t", {0, 1, 2}), dir.path()), K::kMissingFile);
}

TEST(Manifest, MissingFileCarriesPatchIndex) {
  TempDir dir;
  touch_tensor(dir / "a/f0.mht");
  touch_tensor(dir / "a/f2.mht");
  try {
    parse_manifest(record("a", "train", "t", {0, 1, 2}), dir.path());
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_EQ(e.kind(), ManifestError::Kind::kMissingFile);
    EXPECT_EQ(e.patch_index().value_or(99), 1u);
  }
}

TEST(Manifest, SampleSetsMustBeDense) {
  TempDir dir;
  std::string r = record("a", "train", "t", {0, 1, 2});
  r.pop_back();
  const std::string one_sample = r +
      ",\"samples\":[{\"sample\":0,\"patch\":0,\"path\":\"x\"},{\"sample\":0,\"patch\":1,\"path\":\"x\"},"
      "{\"sample\":0,\"patch\":2,\"path\":\"x\"}]}";
  EXPECT_EQ(kind_of(one_sample, dir.path(), {.check_files = false}), ManifestError::Kind::kBadValue);

  std::string samples;
  for (int k : {0, 2})
    for (int p = 0; p < 3; ++p)
      samples += std::string(samples.empty() ? "" : ",") + "{\"sample\":" + std::to_string(k) +
                 ",\"patch\":" + std::to_string(p) + ",\"path\":\"x\"}";
  EXPECT_EQ(kind_of(r + ",\"samples\":[" + samples + "]}", dir.path(), {.check_files = false}),
            ManifestError::Kind::kBadValue);
}

TEST(Manifest, LoadingIsOrderPreservingAndDeterministic) {
  TempDir dir;
  std::string text;
  for (int i = 9; i >= 0; --i) text += record("s" + std::to_string(i), "train", "t", {0, 1, 2}) + "\n";
  const auto a = parse_manifest(text, dir.path(), {.check_files = false});
  const auto b = parse_manifest(text, dir.path(), {.check_files = false});
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].subject_id, "s" + std::to_string(9 - i));
    EXPECT_EQ(a[i].subject_id, b[i].subject_id);
  }
}
