#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "mdood/baselines.hpp"
#include "mdood/errors.hpp"
#include "test_support.hpp"

using namespace mdood;
using testing_support::Gen;

namespace {

LogitVolume logits(std::size_t classes, const Shape& spatial, std::vector<double> v) {
  Shape s{classes};
  s.insert(s.end(), spatial.begin(), spatial.end());
  return {Tensor(s, std::move(v)), "s"};
}

LogitVolume constant_pair(double a, double b, std::size_t voxels) {
  std::vector<double> v(2 * voxels);
  std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(voxels), a);
  std::fill(v.begin() + static_cast<std::ptrdiff_t>(voxels), v.end(), b);
  return logits(2, {voxels}, std::move(v));
}

// Naive softmax per voxel (no max shift; inputs kept moderate).
std::vector<double> softmax_at(const std::vector<double>& v, std::size_t C, std::size_t nvox,
                               std::size_t voxel, double T) {
  std::vector<double> p(C);
  double z = 0;
  for (std::size_t c = 0; c < C; ++c) z += std::exp(v[c * nvox + voxel] / T);
  for (std::size_t c = 0; c < C; ++c) p[c] = std::exp(v[c * nvox + voxel] / T) / z;
  return p;
}

double oracle_max_softmax(const std::vector<double>& v, std::size_t C, double T) {
  const std::size_t nvox = v.size() / C;
  double conf = 0;
  for (std::size_t x = 0; x < nvox; ++x) {
    const auto p = softmax_at(v, C, nvox, x, T);
    conf += *std::max_element(p.begin(), p.end());
  }
  return 1.0 - conf / static_cast<double>(nvox);
}

double oracle_kl(const std::vector<double>& v, std::size_t C) {
  const std::size_t nvox = v.size() / C;
  double conf = 0;
  for (std::size_t x = 0; x < nvox; ++x) {
    const auto p = softmax_at(v, C, nvox, x, 1.0);
    double kl = 0;
    for (double q : p)
      if (q > 0) kl += q * std::log(q * static_cast<double>(C));
    conf += kl / std::log(static_cast<double>(C));
  }
  return 1.0 - conf / static_cast<double>(nvox);
}

double oracle_energy(const std::vector<double>& v, std::size_t C, double T) {
  const std::size_t nvox = v.size() / C;
  double e = 0;
  for (std::size_t x = 0; x < nvox; ++x) {
    double z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(v[c * nvox + x] / T);
    e += -T * std::log(z);
  }
  return e / static_cast<double>(nvox);
}

}  // namespace

TEST(MaxSoftmax, SaturatedAndUniform) {
  EXPECT_NEAR(max_softmax_uncertainty(constant_pair(100, -100, 8)), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(max_softmax_uncertainty(constant_pair(0, 0, 8)), 0.5);
}

TEST(MaxSoftmax, MatchesOracle) {
  Gen g(61);
  for (int it = 0; it < 20; ++it) {
    const auto v = g.normals(2 * 64, 3.0);
    EXPECT_NEAR(max_softmax_uncertainty(logits(2, {4, 4, 4}, v)), oracle_max_softmax(v, 2, 1.0), 1e-12);
    const auto w = g.normals(5 * 27, 2.0);
    EXPECT_NEAR(max_softmax_uncertainty(logits(5, {3, 3, 3}, w)), oracle_max_softmax(w, 5, 1.0), 1e-12);
  }
}

TEST(TemperatureScaling, UnitTemperatureIsBitwiseMaxSoftmax) {
  Gen g(62);
  for (int it = 0; it < 50; ++it) {
    const std::size_t C = g.index(2, 6);
    const auto l = logits(C, {3, 5}, g.normals(C * 15, 20.0));
    const double a = max_softmax_uncertainty(l);
    const double b = temperature_scaled_uncertainty(l, 1.0);
    EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
  }
}

TEST(TemperatureScaling, OracleAndLimit) {
  Gen g(63);
  const auto v = g.normals(3 * 64, 4.0);
  const auto l = logits(3, {4, 4, 4}, v);
  EXPECT_NEAR(temperature_scaled_uncertainty(l, 10.0), oracle_max_softmax(v, 3, 10.0), 1e-12);
  EXPECT_NEAR(temperature_scaled_uncertainty(l, 1e9), 1.0 - 1.0 / 3.0, 1e-8);
  EXPECT_THROW(temperature_scaled_uncertainty(l, 0.0), ValidationError);
  EXPECT_THROW(temperature_scaled_uncertainty(l, -1.0), ValidationError);
}

TEST(KlFromUniform, ExtremesAndOracle) {
  EXPECT_NEAR(kl_from_uniform_uncertainty(constant_pair(0, 0, 4)), 1.0, 1e-15);
  EXPECT_NEAR(kl_from_uniform_uncertainty(constant_pair(200, -200, 4)), 0.0, 1e-12);
  Gen g(64);
  for (int it = 0; it < 20; ++it) {
    const std::size_t C = g.index(2, 5);
    const auto v = g.normals(C * 30, 3.0);
    EXPECT_NEAR(kl_from_uniform_uncertainty(logits(C, {30}, v)), oracle_kl(v, C), 1e-10);
  }
}

TEST(Energy, ClosedFormShiftAndOracle) {
  EXPECT_NEAR(energy_uncertainty(constant_pair(0, 0, 3), 1.0), -std::log(2.0), 1e-15);
  Gen g(65);
  for (int it = 0; it < 20; ++it) {
    auto v = g.normals(3 * 40, 3.0);
    const double e = energy_uncertainty(logits(3, {40}, v), 1.0);
    EXPECT_NEAR(energy_uncertainty(logits(3, {40}, v), 10.0), oracle_energy(v, 3, 10.0), 1e-10);
    const double k = g.uniform(-50, 50);
    for (auto& x : v) x += k;
    EXPECT_NEAR(energy_uncertainty(logits(3, {40}, v), 1.0), e - k, 1e-10);
  }
}

TEST(Energy, HigherWhenLessConfident) {
  // Same winning class, smaller logit scale: less confident, higher energy.
  EXPECT_GT(energy_uncertainty(constant_pair(0.5, 0, 4), 1.0),
            energy_uncertainty(constant_pair(5, 0, 4), 1.0));
}

TEST(Baselines, FiniteForHugeLogits) {
  Gen g(66);
  for (int it = 0; it < 20; ++it) {
    const auto l = logits(3, {50}, g.normals(150, 1e4));
    for (double v : {max_softmax_uncertainty(l), temperature_scaled_uncertainty(l, 0.01),
                     kl_from_uniform_uncertainty(l), energy_uncertainty(l, 1.0),
                     energy_uncertainty(l, 100.0)})
      EXPECT_TRUE(std::isfinite(v));
  }
  const auto extreme = constant_pair(1e4, -1e4, 5);
  EXPECT_TRUE(std::isfinite(kl_from_uniform_uncertainty(extreme)));
  EXPECT_NEAR(energy_uncertainty(extreme, 1.0), -1e4, 1e-9);
}

TEST(Baselines, VoxelPermutationInvariance) {
  Gen g(67);
  const std::size_t C = 3, n = 60;
  const auto v = g.normals(C * n, 2.0);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), g.rng);
  std::vector<double> w(C * n);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t x = 0; x < n; ++x) w[c * n + x] = v[c * n + perm[x]];
  const auto a = logits(C, {n}, v), b = logits(C, {n}, w);
  EXPECT_NEAR(max_softmax_uncertainty(a), max_softmax_uncertainty(b), 1e-14);
  EXPECT_NEAR(kl_from_uniform_uncertainty(a), kl_from_uniform_uncertainty(b), 1e-14);
  EXPECT_NEAR(energy_uncertainty(a, 10), energy_uncertainty(b, 10), 1e-12);
}

TEST(Baselines, InputValidation) {
  EXPECT_THROW(max_softmax_uncertainty(logits(1, {4}, {1, 2, 3, 4})), ValidationError);
  try {
    max_softmax_uncertainty(logits(2, {1}, {NAN, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kNumeric);
  }
  EXPECT_THROW(energy_uncertainty(constant_pair(0, 0, 2), 0.0), ValidationError);
}

TEST(SampleSpread, IdenticalSamplesAreExactlyZero) {
  Gen g(68);
  const auto v = g.normals(64);
  std::vector<double> p(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) p[i] = 1.0 / (1.0 + std::exp(-v[i]));
  const SampleSet s{std::vector<Tensor>(7, Tensor(Shape{4, 4, 4}, p)), "s"};
  EXPECT_EQ(sample_spread_uncertainty(s), 0.0);
}

TEST(SampleSpread, TwoPointPopulationStd) {
  const SampleSet s{{Tensor(Shape{10}, std::vector<double>(10, 0.0)),
                     Tensor(Shape{10}, std::vector<double>(10, 1.0))},
                    "s"};
  EXPECT_DOUBLE_EQ(sample_spread_uncertainty(s), 0.5);
}

TEST(SampleSpread, MatchesVoxelLoopOracle) {
  Gen g(69);
  const std::size_t K = 10, n = 125;
  std::vector<std::vector<double>> vols(K, std::vector<double>(n));
  SampleSet s;
  for (auto& vol : vols) {
    for (auto& x : vol) x = g.uniform();
    s.samples.emplace_back(Shape{5, 5, 5}, vol);
  }
  double want = 0;
  for (std::size_t x = 0; x < n; ++x) {
    double m = 0;
    for (const auto& vol : vols) m += vol[x];
    m /= K;
    double var = 0;
    for (const auto& vol : vols) var += (vol[x] - m) * (vol[x] - m);
    want += std::sqrt(var / K);
  }
  want /= n;
  EXPECT_NEAR(sample_spread_uncertainty(s), want, 1e-10);
}

TEST(SampleSpread, Validation) {
  EXPECT_THROW(sample_spread_uncertainty({{Tensor(Shape{2}, std::vector<double>{0, 1})}, "s"}),
               ValidationError);
  EXPECT_THROW(sample_spread_uncertainty({{Tensor(Shape{2}, std::vector<double>{0, 1}),
                                           Tensor(Shape{3}, std::vector<double>{0, 1, 1})},
                                          "s"}),
               ValidationError);
  EXPECT_THROW(sample_spread_uncertainty({{Tensor(Shape{2}, std::vector<double>{0, 1}),
                                           Tensor(Shape{2}, std::vector<double>{0, 1.5})},
                                          "s"}),
               ValidationError);
}
