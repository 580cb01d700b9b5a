#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mdood/errors.hpp"
#include "mdood/gaussian.hpp"

namespace mdood {

// Raised by batch scoring; carries the position of the offending element
// and keeps the category of the underlying failure.
class ElementError : public Error {
 public:
  ElementError(std::size_t index, const Error& cause)
      : Error(cause.category(), "element " + std::to_string(index) + ": " + cause.what()),
        index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

// Squared Mahalanobis distance (z - mu)^T (sigma + eps I)^{-1} (z - mu),
// evaluated as |L^{-1} (z - mu)|^2 with the stored Cholesky factor.
double mahalanobis(std::span<const double> z, const GaussianModel& model);
double mahalanobis(const ProjectedFeature& z, const GaussianModel& model);

// Scores many vectors at once with blocked triangular solves. The result is
// in input order. A singleton batch is bitwise identical to mahalanobis().
std::vector<double> batch_mahalanobis(std::span<const ProjectedFeature> zs,
                                      const GaussianModel& model, std::size_t workers = 1);
std::vector<double> batch_mahalanobis(const Eigen::Ref<const Eigen::MatrixXd>& columns,
                                      const GaussianModel& model, std::size_t workers = 1);

// |z - mu|^2, for contrasting against the covariance-aware distance.
double squared_euclidean(std::span<const double> z, const GaussianModel& model);

}  // namespace mdood
