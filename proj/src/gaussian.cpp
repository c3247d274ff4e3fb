#include "gats/gaussian.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace gats {

Eigen::Vector3d eigenvalues_sym3(const Eigen::Matrix3d& a) {
  const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  const double q = a.trace() / 3.0;
  const double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) +
                    (a(2, 2) - q) * (a(2, 2) - q) + 2.0 * p1;
  if (p2 <= 0.0) return Eigen::Vector3d::Constant(q);  // scalar multiple of I

  const double p = std::sqrt(p2 / 6.0);
  const Eigen::Matrix3d b = (a - q * Eigen::Matrix3d::Identity()) / p;
  double r = b.determinant() / 2.0;
  r = std::clamp(r, -1.0, 1.0);

  // Near a multiple root the trigonometric split loses accuracy; hand the
  // matrix to the iterative solver instead.
  if (1.0 - r * r < 1e-12) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver;
    solver.compute(a, Eigen::EigenvaluesOnly);
    const Eigen::Vector3d ev = solver.eigenvalues();  // ascending
    return Eigen::Vector3d(ev[2], ev[1], ev[0]);
  }

  const double phi = std::acos(r) / 3.0;
  const double two_pi_3 = 2.0943951023931953;  // 2*pi/3
  const double lambda_max = q + 2.0 * p * std::cos(phi);
  const double lambda_min = q + 2.0 * p * std::cos(phi + two_pi_3);
  const double lambda_mid = 3.0 * q - lambda_max - lambda_min;
  return Eigen::Vector3d(lambda_max, lambda_mid, lambda_min);
}

LocalGaussian estimate_gaussian(const Neighborhood& neighborhood,
                                const GatingConfig& config) {
  const std::vector<NeighborRef>& members = neighborhood.members;
  if (members.empty())
    throw std::domain_error("estimate_gaussian: empty neighborhood");
  if (!(config.epsilon_reg > 0.0))
    throw std::domain_error("estimate_gaussian: epsilon_reg must be positive");

  LocalGaussian g;
  g.member_count = members.size();
  const double n = static_cast<double>(members.size());

  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const NeighborRef& m : members) sum += m.position;
  g.mean = sum / n;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const NeighborRef& m : members) {
    const Eigen::Vector3d d = m.position - g.mean;
    cov(0, 0) += d.x() * d.x();
    cov(0, 1) += d.x() * d.y();
    cov(0, 2) += d.x() * d.z();
    cov(1, 1) += d.y() * d.y();
    cov(1, 2) += d.y() * d.z();
    cov(2, 2) += d.z() * d.z();
  }
  cov /= n;
  cov(1, 0) = cov(0, 1);
  cov(2, 0) = cov(0, 2);
  cov(2, 1) = cov(1, 2);
  g.covariance = cov;

  const double ridge =
      config.epsilon_reg * std::max(cov.trace() / 3.0, kCovarianceFloor);
  g.covariance_reg = cov + ridge * Eigen::Matrix3d::Identity();

  Eigen::LLT<Eigen::Matrix3d> llt(g.covariance_reg);
  if (llt.info() == Eigen::Success) {
    g.inverse_reg = llt.solve(Eigen::Matrix3d::Identity());
  } else {
    // Roundoff pushed the factorization over the edge; stiffen the ridge.
    const Eigen::Matrix3d stiff =
        g.covariance_reg + ridge * Eigen::Matrix3d::Identity();
    g.inverse_reg = Eigen::LLT<Eigen::Matrix3d>(stiff).solve(
        Eigen::Matrix3d::Identity());
  }

  g.eigenvalues = eigenvalues_sym3(g.covariance_reg);
  const double lambda_min = std::max(g.eigenvalues[2], 0.0);
  g.condition_number =
      lambda_min > 0.0 ? std::max(1.0, g.eigenvalues[0] / lambda_min)
                       : std::numeric_limits<double>::infinity();
  return g;
}

double condition_number(const LocalGaussian& g) { return g.condition_number; }

double gating_alpha(double cond, const GatingConfig& config) {
  if (!(cond >= 1.0))
    throw std::domain_error("gating_alpha: condition number must be >= 1");
  if (!(config.sharpness > 0.0))
    throw std::domain_error("gating_alpha: sharpness must be positive");
  const double z = config.sharpness * (config.threshold - std::log(cond));
  return 1.0 / (1.0 + std::exp(-z));
}

std::vector<double> gate_features(std::span<const double> f,
                                  std::span<const double> f_robust, double alpha) {
  if (f.size() != f_robust.size())
    throw std::domain_error("gate_features: dimension mismatch");
  std::vector<double> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i)
    out[i] = alpha * f[i] + (1.0 - alpha) * f_robust[i];
  return out;
}

}  // namespace gats
