#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "gats/pcvideo.hpp"

namespace gats {

// Absolute floor for the covariance ridge, in scene units squared. Keeps the
// regularized matrix positive definite even for a single-point neighborhood.
inline constexpr double kCovarianceFloor = 1e-9;

// Parameters of the uncertainty gate and of the covariance regularization.
// The gate midpoint sits at condition number exp(threshold).
struct GatingConfig {
  double threshold = 4.6051701859880918;  // ln(100)
  double sharpness = 1.0;
  double epsilon_reg = 1e-6;
};

// Local first- and second-order statistics of a neighborhood, with the
// regularized covariance, its inverse, its eigen-spectrum (descending) and
// the condition number used as the uncertainty indicator.
struct LocalGaussian {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();      // population, as estimated
  Eigen::Matrix3d covariance_reg = Eigen::Matrix3d::Zero();  // + eps*max(tr/3,floor)*I
  Eigen::Matrix3d inverse_reg = Eigen::Matrix3d::Zero();
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();     // of covariance_reg
  double condition_number = 1.0;
  std::size_t member_count = 0;
};

// Eigenvalues of a symmetric 3x3 matrix, descending. Closed-form
// trigonometric solution; falls back to an iterative solver when the
// discriminant is nearly degenerate.
Eigen::Vector3d eigenvalues_sym3(const Eigen::Matrix3d& m);

// Population mean/covariance (1/|N| normalization) of the member positions,
// regularized and spectrally analyzed. The neighborhood must be non-empty.
LocalGaussian estimate_gaussian(const Neighborhood& neighborhood,
                                const GatingConfig& config = {});

double condition_number(const LocalGaussian& g);

// Gate coefficient alpha = logistic(sharpness * (threshold - ln cond)).
// Strictly decreasing in cond; 0.5 at cond = exp(threshold).
double gating_alpha(double cond, const GatingConfig& config = {});

// Convex combination alpha*f + (1-alpha)*f_robust. Dimensions must match.
std::vector<double> gate_features(std::span<const double> f,
                                  std::span<const double> f_robust, double alpha);

}  // namespace gats
