#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "mdood/projection.hpp"

namespace mdood {

// Feature dimensions at or above this are refused: covariance estimation
// cost grows cubically and becomes impractical from here on.
inline constexpr std::size_t kMaxFeatureDim = 20000;

inline constexpr double kDefaultEpsScale = 1e-6;

// Multivariate Gaussian over projected training features.
//
// `sigma` is the biased (1/N) sample covariance. `chol` is the lower
// Cholesky factor of sigma + eps * I; distances are evaluated by triangular
// solves against it, never through an explicit inverse.
struct GaussianModel {
  std::size_t dim = 0;
  std::size_t n_samples = 0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd chol;
  double eps = 0.0;
  double eps_scale = kDefaultEpsScale;
  std::string feature_tap;
  int pool_steps = 0;
};

struct FitOptions {
  double eps_scale = kDefaultEpsScale;
  // Partial accumulators fitted concurrently; 0 means all cores.
  std::size_t workers = 1;
  std::string feature_tap;
  int pool_steps = 0;
};

// Streaming first/second moment accumulator. Samples are buffered into
// blocks; each block is centred on its own mean and folded in with the
// pairwise (Chan et al.) update, so no raw sum of outer products is ever
// formed. Two accumulators merge associatively.
class GaussianAccumulator {
 public:
  static constexpr std::size_t kBlockSize = 256;

  explicit GaussianAccumulator(std::size_t dim);

  std::size_t dim() const { return dim_; }
  std::size_t count() const { return count_ + buffered_; }

  void add(std::span<const double> sample);
  void merge(GaussianAccumulator&& other);

  // Consumes the accumulator. Requires at least two samples.
  GaussianModel finalize(const FitOptions& options) &&;

 private:
  void flush();
  void fold(std::size_t n, const Eigen::VectorXd& mean,
            const Eigen::Ref<const Eigen::MatrixXd>& centred);

  std::size_t dim_;
  std::size_t count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;  // lower triangle holds the scatter matrix
  Eigen::MatrixXd block_;
  std::size_t buffered_ = 0;
};

GaussianModel fit(std::span<const ProjectedFeature> samples, const FitOptions& options = {});

// Columns of `samples` are observations.
GaussianModel fit(const Eigen::Ref<const Eigen::MatrixXd>& samples, const FitOptions& options = {});

// Cholesky-factorises sigma + eps * I, starting from
// eps = eps_scale * trace(sigma) / d and escalating x10 up to three times.
// Fills model.chol and model.eps.
void factorize(GaussianModel& model, double eps_scale);

void ensure_tap(const GaussianModel& model, const std::string& tap);

// Versioned binary container; see docs/formats.md.
inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const GaussianModel& model, const std::filesystem::path& path);

// Loads a model; when `expected_tap` is given a differing tap raises
// TapMismatch.
GaussianModel load_model(const std::filesystem::path& path,
                         const std::optional<std::string>& expected_tap = std::nullopt);

}  // namespace mdood
