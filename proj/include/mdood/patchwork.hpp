#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mdood/tensor.hpp"

namespace mdood {

// Sliding-window decomposition with 50% overlap. Along each axis origins
// advance by floor(patch / 2) and the last origin is clamped to
// extent - patch. Patches are enumerated in row-major order over the
// per-axis origin lists (first axis slowest).
class PatchGrid {
 public:
  PatchGrid(Shape image_shape, Shape patch_size);

  const Shape& image_shape() const { return image_shape_; }
  const Shape& patch_size() const { return patch_size_; }
  std::size_t rank() const { return image_shape_.size(); }

  // Origins along one axis.
  const std::vector<std::size_t>& axis_origins(std::size_t axis) const {
    return axis_origins_[axis];
  }

  std::size_t num_patches() const { return num_patches_; }

  // Origin of patch `index` (one offset per axis).
  std::vector<std::size_t> origin(std::size_t index) const;
  std::vector<std::vector<std::size_t>> origins() const;

 private:
  Shape image_shape_;
  Shape patch_size_;
  std::vector<std::vector<std::size_t>> axis_origins_;
  std::size_t num_patches_ = 0;
};

PatchGrid make_grid(const Shape& image_shape, const Shape& patch_size);

// Per-axis origins for a single axis; exposed for tests and the exporter.
std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t patch);

// Center-weighted importance over one patch: separable Gaussian, peak 1.
struct ImportanceMap {
  Shape patch_size;
  std::vector<double> weights;  // row-major over patch_size
};

inline constexpr double kDefaultSigmaScale = 0.125;

ImportanceMap gaussian_importance(const Shape& patch_size,
                                  double sigma_scale = kDefaultSigmaScale);

struct UncertaintyMask {
  std::string subject_id;
  Tensor values;  // f64, image_shape
};

// Weighted average of per-patch scalars: each voxel receives
// sum(score_p * w_p(v)) / sum(w_p(v)) over the patches covering it.
UncertaintyMask aggregate(const PatchGrid& grid, std::span<const double> patch_scores,
                          const ImportanceMap& importance, std::string subject_id = {});

// Same blending for per-patch fields. Each patch tensor has shape
// [channels..., patch_size...] (leading channel axes optional); the result
// has shape [channels..., image_shape...]. Parts of a patch falling outside
// the image are ignored.
Tensor stitch(const PatchGrid& grid, std::span<const Tensor> patches,
              const ImportanceMap& importance);

// Mean over all voxels.
double subject_score(const UncertaintyMask& mask);

// Affine normalisation fitted on raw training scores.
//
// For non-negative score scales the interval [min, 2 * max] is mapped onto
// [0, 1]. Scales that dip below zero (energy) use the shift-invariant form
// [min, min + 2 * (max - min)]; both agree when min == 0. Values are clamped.
class ScoreNormalizer {
 public:
  explicit ScoreNormalizer(std::span<const double> train_raw);
  ScoreNormalizer(double train_min, double train_max);

  double operator()(double raw) const;

  double train_min() const { return min_; }
  double train_max() const { return max_; }
  double lower() const { return min_; }
  double upper() const { return upper_; }

 private:
  void init();

  double min_ = 0.0;
  double max_ = 0.0;
  double upper_ = 0.0;
};

double normalize_scores(std::span<const double> train_raw, double query_raw);

}  // namespace mdood
