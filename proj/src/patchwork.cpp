#include "mdood/patchwork.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdood/errors.hpp"

namespace mdood {

std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t patch) {
  if (extent == 0 || patch == 0) throw ValidationError("patch grid extents must be >= 1");
  if (patch >= extent) return {0};
  const std::size_t step = std::max<std::size_t>(1, patch / 2);
  std::vector<std::size_t> origins;
  for (std::size_t o = 0; o + patch < extent; o += step) origins.push_back(o);
  const std::size_t last = extent - patch;
  if (origins.empty() || origins.back() != last) origins.push_back(last);
  return origins;
}

PatchGrid::PatchGrid(Shape image_shape, Shape patch_size)
    : image_shape_(std::move(image_shape)), patch_size_(std::move(patch_size)) {
  if (image_shape_.empty() || image_shape_.size() != patch_size_.size()) {
    throw ValidationError("image shape " + shape_to_string(image_shape_) + " and patch size " +
                          shape_to_string(patch_size_) + " must have the same non-zero rank");
  }
  if (image_shape_.size() >= kMaxTensorRank) {
    throw ValidationError("spatial rank must be below 5");
  }
  num_patches_ = 1;
  for (std::size_t a = 0; a < image_shape_.size(); ++a) {
    axis_origins_.push_back(mdood::axis_origins(image_shape_[a], patch_size_[a]));
    num_patches_ *= axis_origins_.back().size();
  }
}

std::vector<std::size_t> PatchGrid::origin(std::size_t index) const {
  if (index >= num_patches_) {
    throw ValidationError("patch index " + std::to_string(index) + " out of range (" +
                          std::to_string(num_patches_) + " patches)");
  }
  std::vector<std::size_t> out(rank());
  for (std::size_t a = rank(); a-- > 0;) {
    const std::size_t n = axis_origins_[a].size();
    out[a] = axis_origins_[a][index % n];
    index /= n;
  }
  return out;
}

std::vector<std::vector<std::size_t>> PatchGrid::origins() const {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(num_patches_);
  for (std::size_t i = 0; i < num_patches_; ++i) out.push_back(origin(i));
  return out;
}

PatchGrid make_grid(const Shape& image_shape, const Shape& patch_size) {
  return PatchGrid(image_shape, patch_size);
}

ImportanceMap gaussian_importance(const Shape& patch_size, double sigma_scale) {
  if (patch_size.empty()) throw ValidationError("importance map needs at least one axis");
  if (!(sigma_scale > 0.0) || !std::isfinite(sigma_scale)) {
    throw ValidationError("sigma_scale must be positive and finite");
  }
  std::vector<std::vector<double>> axes;
  for (std::size_t extent : patch_size) {
    if (extent == 0) throw ValidationError("importance map extents must be >= 1");
    const double center = (static_cast<double>(extent) - 1.0) / 2.0;
    const double sigma = sigma_scale * static_cast<double>(extent);
    std::vector<double> g(extent);
    for (std::size_t i = 0; i < extent; ++i) {
      const double x = static_cast<double>(i) - center;
      g[i] = std::exp(-(x * x) / (2.0 * sigma * sigma));
    }
    axes.push_back(std::move(g));
  }

  ImportanceMap map{patch_size, std::vector<double>(element_count(patch_size))};
  std::vector<std::size_t> idx(patch_size.size(), 0);
  for (double& w : map.weights) {
    double v = 1.0;
    for (std::size_t a = 0; a < idx.size(); ++a) v *= axes[a][idx[a]];
    w = v;
    for (std::size_t a = idx.size(); a-- > 0;) {
      if (++idx[a] < patch_size[a]) break;
      idx[a] = 0;
    }
  }

  const double peak = *std::max_element(map.weights.begin(), map.weights.end());
  const double floor = 1e-8;
  for (double& w : map.weights) w = std::max(w / peak, floor);
  return map;
}

namespace {

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t a = shape.size(); a-- > 1;) strides[a - 1] = strides[a] * shape[a];
  return strides;
}

// Calls fn(image_offset, patch_offset) for every voxel of the patch at
// `origin` that lies inside the image.
template <typename Fn>
void for_each_patch_voxel(const PatchGrid& grid, const std::vector<std::size_t>& origin,
                          Fn&& fn) {
  const Shape& image = grid.image_shape();
  const Shape& patch = grid.patch_size();
  const std::size_t rank = grid.rank();
  const auto istrides = row_major_strides(image);
  const auto pstrides = row_major_strides(patch);

  Shape clipped(rank);
  for (std::size_t a = 0; a < rank; ++a) clipped[a] = std::min(patch[a], image[a] - origin[a]);

  std::vector<std::size_t> idx(rank, 0);
  const std::size_t inner = clipped[rank - 1];
  const std::size_t outer = element_count(clipped) / inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t ioff = 0;
    std::size_t poff = 0;
    for (std::size_t a = 0; a < rank; ++a) {
      ioff += (origin[a] + idx[a]) * istrides[a];
      poff += idx[a] * pstrides[a];
    }
    for (std::size_t i = 0; i < inner; ++i) fn(ioff + i, poff + i);
    for (std::size_t a = rank - 1; a-- > 0;) {
      if (++idx[a] < clipped[a]) break;
      idx[a] = 0;
    }
  }
}

void check_importance(const PatchGrid& grid, const ImportanceMap& importance) {
  if (importance.patch_size != grid.patch_size()) {
    throw ValidationError("importance map " + shape_to_string(importance.patch_size) +
                          " does not match patch size " + shape_to_string(grid.patch_size()));
  }
}

}  // namespace

UncertaintyMask aggregate(const PatchGrid& grid, std::span<const double> patch_scores,
                          const ImportanceMap& importance, std::string subject_id) {
  check_importance(grid, importance);
  if (patch_scores.size() != grid.num_patches()) {
    throw ValidationError("expected " + std::to_string(grid.num_patches()) +
                          " patch scores, got " + std::to_string(patch_scores.size()));
  }
  for (std::size_t p = 0; p < patch_scores.size(); ++p) {
    if (!std::isfinite(patch_scores[p])) {
      throw NumericError("patch score " + std::to_string(p) + " is not finite");
    }
  }

  const std::size_t nvox = element_count(grid.image_shape());
  std::vector<double> num(nvox, 0.0);
  std::vector<double> den(nvox, 0.0);
  for (std::size_t p = 0; p < grid.num_patches(); ++p) {
    const double s = patch_scores[p];
    for_each_patch_voxel(grid, grid.origin(p), [&](std::size_t iv, std::size_t pv) {
      const double w = importance.weights[pv];
      num[iv] += s * w;
      den[iv] += w;
    });
  }
  for (std::size_t v = 0; v < nvox; ++v) {
    if (!(den[v] > 0.0)) {
      throw NumericError("voxel " + std::to_string(v) + " received no patch weight");
    }
    num[v] /= den[v];
  }
  return UncertaintyMask{std::move(subject_id), Tensor(grid.image_shape(), std::move(num))};
}

Tensor stitch(const PatchGrid& grid, std::span<const Tensor> patches,
              const ImportanceMap& importance) {
  check_importance(grid, importance);
  if (patches.size() != grid.num_patches()) {
    throw ValidationError("expected " + std::to_string(grid.num_patches()) +
                          " patch tensors, got " + std::to_string(patches.size()));
  }
  const std::size_t rank = grid.rank();
  const Shape& first = patches.front().shape();
  if (first.size() < rank) throw ValidationError("patch tensor rank below spatial rank");
  const Shape lead(first.begin(), first.end() - static_cast<std::ptrdiff_t>(rank));
  const std::size_t channels = element_count(lead);
  const std::size_t pvox = element_count(grid.patch_size());
  const std::size_t nvox = element_count(grid.image_shape());

  Shape patch_shape = lead;
  patch_shape.insert(patch_shape.end(), grid.patch_size().begin(), grid.patch_size().end());
  Shape out_shape = lead;
  out_shape.insert(out_shape.end(), grid.image_shape().begin(), grid.image_shape().end());
  if (out_shape.size() > kMaxTensorRank) throw ValidationError("stitched tensor rank exceeds 5");

  std::vector<double> num(channels * nvox, 0.0);
  std::vector<double> den(nvox, 0.0);
  for (std::size_t p = 0; p < patches.size(); ++p) {
    if (patches[p].shape() != patch_shape) {
      throw ValidationError("patch " + std::to_string(p) + " has shape " +
                            shape_to_string(patches[p].shape()) + ", expected " +
                            shape_to_string(patch_shape));
    }
    const std::vector<double> values = patches[p].to_f64();
    for_each_patch_voxel(grid, grid.origin(p), [&](std::size_t iv, std::size_t pv) {
      const double w = importance.weights[pv];
      den[iv] += w;
      for (std::size_t c = 0; c < channels; ++c) num[c * nvox + iv] += values[c * pvox + pv] * w;
    });
  }
  for (std::size_t v = 0; v < nvox; ++v) {
    if (!(den[v] > 0.0)) {
      throw NumericError("voxel " + std::to_string(v) + " received no patch weight");
    }
    for (std::size_t c = 0; c < channels; ++c) num[c * nvox + v] /= den[v];
  }
  return Tensor(std::move(out_shape), std::move(num));
}

double subject_score(const UncertaintyMask& mask) {
  const auto values = mask.values.values<double>();
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

ScoreNormalizer::ScoreNormalizer(std::span<const double> train_raw) {
  if (train_raw.empty()) throw ValidationError("cannot normalise without training scores");
  min_ = std::numeric_limits<double>::infinity();
  max_ = -std::numeric_limits<double>::infinity();
  for (double v : train_raw) {
    if (!std::isfinite(v)) throw NumericError("training score is not finite");
    min_ = std::min(min_, v);
    max_ = std::max(max_, v);
  }
  init();
}

ScoreNormalizer::ScoreNormalizer(double train_min, double train_max)
    : min_(train_min), max_(train_max) {
  init();
}

void ScoreNormalizer::init() {
  if (!std::isfinite(min_) || !std::isfinite(max_)) {
    throw NumericError("normalisation bounds must be finite");
  }
  if (!(max_ > min_)) {
    throw ValidationError(
        "all training scores are identical; the normalisation range is empty. Check that the "
        "training subjects actually differ (features, logits or samples)");
  }
  upper_ = min_ >= 0.0 ? 2.0 * max_ : min_ + 2.0 * (max_ - min_);
}

double ScoreNormalizer::operator()(double raw) const {
  const double u = (raw - min_) / (upper_ - min_);
  return std::clamp(u, 0.0, 1.0);
}

double normalize_scores(std::span<const double> train_raw, double query_raw) {
  return ScoreNormalizer(train_raw)(query_raw);
}

}  // namespace mdood
