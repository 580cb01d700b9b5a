#include "mdood/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "mdood/errors.hpp"

namespace mdood {

namespace {

struct ClassLayout {
  std::size_t classes;
  std::size_t voxels;
};

ClassLayout checked_layout(const LogitVolume& l, std::vector<double>& values) {
  if (l.values.ndim() < 2) {
    throw ValidationError("logits of '" + l.subject_id + "' need shape [classes, spatial...]");
  }
  if (l.values.dtype() == DType::kU8) throw ValidationError("logits must be f32 or f64");
  const std::size_t classes = l.values.shape()[0];
  if (classes < 2) throw ValidationError("logits need at least two classes");
  values = l.values.to_f64();
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("logits of '" + l.subject_id + "' are not finite");
  }
  return {classes, values.size() / classes};
}

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ValidationError("temperature must be positive and finite");
  }
}

// Per-voxel log-sum-exp of logits / T, shifted by the voxel maximum.
// Calls fn(voxel, scaled_max, sum_exp) where sum_exp = sum_c exp(z_c - max).
template <typename Fn>
void for_each_voxel_lse(const std::vector<double>& values, ClassLayout layout, double t, Fn&& fn) {
  for (std::size_t v = 0; v < layout.voxels; ++v) {
    double m = values[v] / t;
    for (std::size_t c = 1; c < layout.classes; ++c) {
      m = std::max(m, values[c * layout.voxels + v] / t);
    }
    double s = 0.0;
    for (std::size_t c = 0; c < layout.classes; ++c) {
      s += std::exp(values[c * layout.voxels + v] / t - m);
    }
    fn(v, m, s);
  }
}

}  // namespace

double temperature_scaled_uncertainty(const LogitVolume& logits, double temperature) {
  check_temperature(temperature);
  std::vector<double> values;
  const ClassLayout layout = checked_layout(logits, values);
  double confidence = 0.0;
  // The arg-max class contributes exp(0) = 1, so its probability is 1 / s.
  for_each_voxel_lse(values, layout, temperature,
                     [&](std::size_t, double, double s) { confidence += 1.0 / s; });
  return 1.0 - confidence / static_cast<double>(layout.voxels);
}

double max_softmax_uncertainty(const LogitVolume& logits) {
  return temperature_scaled_uncertainty(logits, 1.0);
}

double kl_from_uniform_uncertainty(const LogitVolume& logits) {
  std::vector<double> values;
  const ClassLayout layout = checked_layout(logits, values);
  const double log_c = std::log(static_cast<double>(layout.classes));
  double confidence = 0.0;
  for_each_voxel_lse(values, layout, 1.0, [&](std::size_t v, double m, double s) {
    const double lse = m + std::log(s);
    double kl = 0.0;
    for (std::size_t c = 0; c < layout.classes; ++c) {
      const double log_p = values[c * layout.voxels + v] - lse;
      kl += std::exp(log_p) * (log_p + log_c);
    }
    confidence += kl / log_c;
  });
  return 1.0 - confidence / static_cast<double>(layout.voxels);
}

double energy_uncertainty(const LogitVolume& logits, double temperature) {
  check_temperature(temperature);
  std::vector<double> values;
  const ClassLayout layout = checked_layout(logits, values);
  double energy = 0.0;
  for_each_voxel_lse(values, layout, temperature, [&](std::size_t, double m, double s) {
    energy += -temperature * (m + std::log(s));
  });
  return energy / static_cast<double>(layout.voxels);
}

double sample_spread_uncertainty(const SampleSet& set) {
  const auto& samples = set.samples;
  if (samples.size() < 2) throw ValidationError("sample sets need at least two samples");
  std::vector<std::vector<double>> values;
  values.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (samples[k].shape() != samples.front().shape()) {
      throw ValidationError("sample " + std::to_string(k) + " of '" + set.subject_id +
                            "' has shape " + shape_to_string(samples[k].shape()) + ", expected " +
                            shape_to_string(samples.front().shape()));
    }
    values.push_back(samples[k].to_f64());
    for (double p : values.back()) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw ValidationError("sample probabilities of '" + set.subject_id +
                              "' must lie in [0, 1]");
      }
    }
  }
  const std::size_t voxels = values.front().size();
  const double k = static_cast<double>(values.size());
  double total = 0.0;
  for (std::size_t v = 0; v < voxels; ++v) {
    // Deviations from the first sample keep identical samples at exactly 0.
    const double ref = values[0][v];
    double mean = 0.0;
    for (const auto& s : values) mean += s[v] - ref;
    mean /= k;
    double var = 0.0;
    for (const auto& s : values) {
      const double dev = (s[v] - ref) - mean;
      var += dev * dev;
    }
    total += std::sqrt(var / k);
  }
  return total / static_cast<double>(voxels);
}

}  // namespace mdood
