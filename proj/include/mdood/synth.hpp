#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mdood/manifest.hpp"

namespace mdood {

// Monotone map from shift magnitude to target Dice:
// clamp(intercept - slope * m, lo, hi) + uniform noise in [-noise, noise].
struct DiceLink {
  double intercept = 0.9;
  double slope = 0.15;
  double lo = 0.05;
  double hi = 0.95;
  double noise = 0.05;
};

struct SynthConfig {
  std::uint64_t seed = 1;

  // Feature maps are [channels, s0, s1, s2] with s = feature_spatial * 2^k,
  // k = upsample_rounds. Each projected cell is replicated over a 2^k block
  // so that k pooling rounds recover the Gaussian sample exactly.
  std::size_t channels = 8;
  Shape feature_spatial{2, 2, 2};
  std::size_t upsample_rounds = 0;

  std::size_t n_train = 200;
  std::size_t n_id_test = 200;
  std::size_t n_ood = 200;  // per shift magnitude
  // Multiples of the ID standard deviation along a fixed random direction.
  std::vector<double> shift_magnitudes{10.0};
  // Ratio of largest to smallest eigenvalue of the ID covariance.
  double covariance_condition = 100.0;
  DiceLink dice_link;

  Shape image_shape{6, 6, 6};
  Shape patch_size{4, 4, 4};
  std::size_t num_samples = 4;  // prediction samples per patch; 0 disables
  bool write_logits = true;

  std::string feature_tap = "synthetic-encoder";
  std::string dataset_tag = "synth";
  std::size_t workers = 0;

  std::size_t feature_dim() const;
  void validate() const;
};

struct SynthOutput {
  std::filesystem::path manifest_path;
  std::vector<SubjectManifest> subjects;
};

// Writes tensors and manifest.jsonl under `out_dir`. Output depends only on
// the config (not on the worker count).
SynthOutput generate(const SynthConfig& config, const std::filesystem::path& out_dir);

// Derives an independent stream seed for item `index`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// Two-dimensional point sets for contrasting Euclidean and Mahalanobis
// ranking: ID points from N(0, R diag(100, 0.01) R^T), OOD points displaced
// by about one unit along the low-variance axis. Columns are points.
struct PlanarInstance {
  Eigen::MatrixXd train;
  Eigen::MatrixXd id_test;
  Eigen::MatrixXd ood;
};

PlanarInstance anisotropic_planar_instance(std::uint64_t seed, std::size_t n_train = 500,
                                           std::size_t n_id_test = 200, std::size_t n_ood = 50);

}  // namespace mdood
