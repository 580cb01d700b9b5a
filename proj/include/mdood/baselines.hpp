#pragma once

#include <string>
#include <vector>

#include "mdood/tensor.hpp"

namespace mdood {

// Class scores laid out [num_classes, spatial...] (f32 or f64).
struct LogitVolume {
  Tensor values;
  std::string subject_id;
};

// K >= 2 foreground probability volumes of identical shape, e.g. from
// dropout passes or flipped inputs.
struct SampleSet {
  std::vector<Tensor> samples;
  std::string subject_id;
};

// 1 - mean over voxels of max_c softmax(logits)_c.
double max_softmax_uncertainty(const LogitVolume& logits);

// As max_softmax_uncertainty with softmax(logits / T). T = 1 reproduces it
// bit for bit.
double temperature_scaled_uncertainty(const LogitVolume& logits, double temperature);

// 1 - mean over voxels of KL(softmax(logits) || uniform) / log C.
double kl_from_uniform_uncertainty(const LogitVolume& logits);

// Mean over voxels of -T * logsumexp(logits / T). Higher means less certain.
double energy_uncertainty(const LogitVolume& logits, double temperature);

// Mean over voxels of the population standard deviation across samples.
double sample_spread_uncertainty(const SampleSet& samples);

}  // namespace mdood
