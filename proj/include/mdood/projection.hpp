#pragma once

#include <cstddef>
#include <vector>

#include "mdood/tensor.hpp"

namespace mdood {

inline constexpr std::size_t kDefaultDimensionBudget = 10000;

// Flattened, pooled feature vector.
struct ProjectedFeature {
  std::vector<double> vector;
  Shape source_shape;
  int pool_steps = 0;

  std::size_t dim() const { return vector.size(); }
};

// Number of leading non-spatial axes: 4-D maps are channel-major
// [C, D, H, W]; maps of rank <= 3 are purely spatial.
std::size_t channel_axes(const Shape& shape);

// Output extent of one pooled axis. Windows that run past the border
// average only their in-bounds elements, so an axis shorter than the
// kernel collapses to a single cell.
std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride);

// Average pooling over the spatial axes; channels are left untouched.
// `kernel` and `stride` carry one entry per spatial axis. The result is f64.
Tensor avg_pool(const Tensor& t, const std::vector<std::size_t>& kernel,
                const std::vector<std::size_t>& stride);

// Pools with kernel = stride = 2 on every spatial axis.
Tensor avg_pool2(const Tensor& t);

// Repeats avg_pool2 until the element count drops strictly below `budget`,
// then flattens in row-major order.
ProjectedFeature project(const Tensor& feature_map, std::size_t budget = kDefaultDimensionBudget);

}  // namespace mdood
