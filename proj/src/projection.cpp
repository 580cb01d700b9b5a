#include "mdood/projection.hpp"

#include <algorithm>

#include "mdood/errors.hpp"

namespace mdood {

std::size_t channel_axes(const Shape& shape) {
  if (shape.size() == 4) return 1;
  if (shape.size() >= 1 && shape.size() <= 3) return 0;
  throw ValidationError("feature maps must have rank 1-4, got shape " + shape_to_string(shape));
}

std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
  if (in < kernel) return 1;
  return (in - kernel) / stride + 1;
}

namespace {

template <typename T>
std::vector<double> pool_impl(std::span<const T> in, std::size_t channels, const Shape& spatial,
                              const Shape& out_spatial, const std::vector<std::size_t>& kernel,
                              const std::vector<std::size_t>& stride) {
  const std::size_t rank = spatial.size();
  const std::size_t in_vox = element_count(spatial);
  const std::size_t out_vox = element_count(out_spatial);

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t a = rank; a-- > 1;) in_strides[a - 1] = in_strides[a] * spatial[a];

  std::vector<double> out(channels * out_vox);
  std::vector<std::size_t> o(rank, 0);
  std::vector<std::size_t> lo(rank), hi(rank), w(rank);
  for (std::size_t ov = 0; ov < out_vox; ++ov) {
    std::size_t window = 1;
    for (std::size_t a = 0; a < rank; ++a) {
      lo[a] = o[a] * stride[a];
      hi[a] = std::min(lo[a] + kernel[a], spatial[a]);
      window *= hi[a] - lo[a];
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const T* base = in.data() + c * in_vox;
      double sum = 0.0;
      std::fill(w.begin(), w.end(), 0);
      for (std::size_t k = 0; k < window; ++k) {
        std::size_t off = 0;
        for (std::size_t a = 0; a < rank; ++a) off += (lo[a] + w[a]) * in_strides[a];
        sum += static_cast<double>(base[off]);
        for (std::size_t a = rank; a-- > 0;) {
          if (++w[a] < hi[a] - lo[a]) break;
          w[a] = 0;
        }
      }
      out[c * out_vox + ov] = sum / static_cast<double>(window);
    }
    for (std::size_t a = rank; a-- > 0;) {
      if (++o[a] < out_spatial[a]) break;
      o[a] = 0;
    }
  }
  return out;
}

}  // namespace

Tensor avg_pool(const Tensor& t, const std::vector<std::size_t>& kernel,
                const std::vector<std::size_t>& stride) {
  if (t.size() == 0) throw ValidationError("cannot pool an empty tensor");
  const Shape& shape = t.shape();
  const std::size_t lead = channel_axes(shape);
  const Shape spatial(shape.begin() + static_cast<std::ptrdiff_t>(lead), shape.end());
  if (kernel.size() != spatial.size() || stride.size() != spatial.size()) {
    throw ValidationError("pooling kernel/stride need one entry per spatial axis (" +
                          std::to_string(spatial.size()) + ")");
  }
  for (std::size_t a = 0; a < spatial.size(); ++a) {
    if (kernel[a] == 0 || stride[a] == 0) throw ValidationError("kernel and stride must be >= 1");
  }

  Shape out_spatial(spatial.size());
  for (std::size_t a = 0; a < spatial.size(); ++a) {
    out_spatial[a] = pooled_extent(spatial[a], kernel[a], stride[a]);
  }
  const std::size_t channels = lead ? shape[0] : 1;

  std::vector<double> out;
  switch (t.dtype()) {
    case DType::kF32:
      out = pool_impl(t.values<float>(), channels, spatial, out_spatial, kernel, stride);
      break;
    case DType::kF64:
      out = pool_impl(t.values<double>(), channels, spatial, out_spatial, kernel, stride);
      break;
    case DType::kU8:
      throw ValidationError("feature maps must be f32 or f64");
  }

  Shape out_shape;
  if (lead) out_shape.push_back(channels);
  out_shape.insert(out_shape.end(), out_spatial.begin(), out_spatial.end());
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor avg_pool2(const Tensor& t) {
  const std::size_t rank = t.ndim() - channel_axes(t.shape());
  const std::vector<std::size_t> two(rank, 2);
  return avg_pool(t, two, two);
}

ProjectedFeature project(const Tensor& feature_map, std::size_t budget) {
  if (budget < 1) throw ValidationError("dimension budget must be >= 1");
  if (feature_map.size() == 0) throw ValidationError("cannot project an empty feature map");
  if (feature_map.dtype() == DType::kU8) throw ValidationError("feature maps must be f32 or f64");

  ProjectedFeature out;
  out.source_shape = feature_map.shape();
  if (feature_map.size() < budget) {
    out.vector = feature_map.to_f64();
    return out;
  }

  const std::size_t lead = channel_axes(feature_map.shape());
  Tensor current = feature_map;
  while (current.size() >= budget) {
    const Shape& s = current.shape();
    const bool degenerate = std::all_of(s.begin() + static_cast<std::ptrdiff_t>(lead), s.end(),
                                        [](std::size_t e) { return e == 1; });
    if (degenerate) {
      throw ValidationError("pooling reached spatial extent 1 with " +
                            std::to_string(current.size()) +
                            " elements left, still at or above the budget of " +
                            std::to_string(budget));
    }
    current = avg_pool2(current);
    ++out.pool_steps;
  }
  auto values = current.values<double>();
  out.vector.assign(values.begin(), values.end());
  return out;
}

}  // namespace mdood
