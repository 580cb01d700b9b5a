#include "mdood/mahalanobis.hpp"

#include <cmath>

#include "mdood/parallel.hpp"

namespace mdood {

namespace {

constexpr std::size_t kSolveBlock = 256;

void check_model(const GaussianModel& model) {
  const auto d = static_cast<Eigen::Index>(model.dim);
  if (model.chol.rows() != d || model.chol.cols() != d || model.mu.size() != d) {
    throw ValidationError("model is not factorised");
  }
}

void load_column(std::span<const double> z, const GaussianModel& model,
                 Eigen::Ref<Eigen::VectorXd> out) {
  if (z.size() != model.dim) {
    throw DimensionMismatch("vector has dimension " + std::to_string(z.size()) +
                            ", model expects " + std::to_string(model.dim));
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!std::isfinite(z[i])) {
      throw NumericError("component " + std::to_string(i) + " is not finite");
    }
    out[static_cast<Eigen::Index>(i)] = z[i] - model.mu[static_cast<Eigen::Index>(i)];
  }
}

template <typename GetColumn>
std::vector<double> score_columns(std::size_t n, GetColumn&& column, const GaussianModel& model,
                                  std::size_t workers) {
  check_model(model);
  std::vector<double> out(n);
  const std::size_t blocks = (n + kSolveBlock - 1) / kSolveBlock;
  const auto d = static_cast<Eigen::Index>(model.dim);
  parallel_for(blocks, workers, [&](std::size_t b) {
    const std::size_t begin = b * kSolveBlock;
    const std::size_t width = std::min(kSolveBlock, n - begin);
    Eigen::MatrixXd y(d, static_cast<Eigen::Index>(width));
    for (std::size_t j = 0; j < width; ++j) {
      try {
        load_column(column(begin + j), model, y.col(static_cast<Eigen::Index>(j)));
      } catch (const Error& e) {
        throw ElementError(begin + j, e);
      }
    }
    model.chol.triangularView<Eigen::Lower>().solveInPlace(y);
    for (std::size_t j = 0; j < width; ++j) {
      out[begin + j] = y.col(static_cast<Eigen::Index>(j)).squaredNorm();
    }
  });
  return out;
}

}  // namespace

std::vector<double> batch_mahalanobis(std::span<const ProjectedFeature> zs,
                                      const GaussianModel& model, std::size_t workers) {
  return score_columns(
      zs.size(), [&](std::size_t i) { return std::span<const double>(zs[i].vector); }, model,
      workers);
}

std::vector<double> batch_mahalanobis(const Eigen::Ref<const Eigen::MatrixXd>& columns,
                                      const GaussianModel& model, std::size_t workers) {
  const auto rows = static_cast<std::size_t>(columns.rows());
  return score_columns(
      static_cast<std::size_t>(columns.cols()),
      [&](std::size_t i) {
        return std::span<const double>(columns.col(static_cast<Eigen::Index>(i)).data(), rows);
      },
      model, workers);
}

double mahalanobis(std::span<const double> z, const GaussianModel& model) {
  try {
    return score_columns(1, [&](std::size_t) { return z; }, model, 1).front();
  } catch (const ElementError& e) {
    // Re-raise without the batch position for the single-vector API.
    if (e.category() == ErrorCategory::kNumeric) throw NumericError(e.what());
    throw DimensionMismatch(e.what());
  }
}

double mahalanobis(const ProjectedFeature& z, const GaussianModel& model) {
  return mahalanobis(std::span<const double>(z.vector), model);
}

double squared_euclidean(std::span<const double> z, const GaussianModel& model) {
  if (z.size() != model.dim) {
    throw DimensionMismatch("vector has dimension " + std::to_string(z.size()) +
                            ", model expects " + std::to_string(model.dim));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double diff = z[i] - model.mu[static_cast<Eigen::Index>(i)];
    sum += diff * diff;
  }
  return sum;
}

}  // namespace mdood
