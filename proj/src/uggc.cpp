#include "gats/uggc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gats {

int KernelSpec::standard_scale_index() const {
  int best = 0;
  double best_gap = std::abs(scale_multipliers[0] - 1.0);
  for (int j = 1; j < static_cast<int>(scale_multipliers.size()); ++j) {
    const double gap = std::abs(scale_multipliers[static_cast<std::size_t>(j)] - 1.0);
    if (gap < best_gap) {
      best_gap = gap;
      best = j;
    }
  }
  return best;
}

void KernelSpec::validate() const {
  if (!(base_radius > 0.0))
    throw std::domain_error("KernelSpec: base_radius must be positive");
  if (scale_multipliers.empty())
    throw std::domain_error("KernelSpec: at least one scale multiplier required");
  for (std::size_t j = 0; j < scale_multipliers.size(); ++j) {
    if (!(scale_multipliers[j] > 0.0))
      throw std::domain_error("KernelSpec: multipliers must be positive");
    if (j > 0 && scale_multipliers[j] < scale_multipliers[j - 1])
      throw std::domain_error("KernelSpec: multipliers must be ascending");
  }
}

double gaussian_weight(const Eigen::Vector3d& x, const LocalGaussian& g,
                       KernelForm form, double sigma) {
  if (!x.allFinite())
    throw std::domain_error("gaussian_weight: non-finite position");
  if (!(sigma > 0.0))
    throw std::domain_error("gaussian_weight: sigma must be positive");

  const Eigen::Vector3d d = x - g.mean;
  const double sq = d.squaredNorm();
  double geometric = 0.0;
  switch (form) {
    case KernelForm::gaussian_rbf:
      geometric = std::exp(-sq / (2.0 * sigma * sigma));
      break;
    case KernelForm::inverse_multiquadric:
      geometric = 1.0 / std::sqrt(1.0 + sq / (sigma * sigma));
      break;
  }
  const double mahalanobis = d.dot(g.inverse_reg * d);
  return geometric * std::exp(-0.5 * mahalanobis);
}

Eigen::Vector3d gaussian_weight_gradient(const Eigen::Vector3d& x,
                                         const LocalGaussian& g, KernelForm form,
                                         double sigma) {
  const Eigen::Vector3d d = x - g.mean;
  const Eigen::Vector3d inv_d = g.inverse_reg * d;
  const double w = gaussian_weight(x, g, form, sigma);
  switch (form) {
    case KernelForm::gaussian_rbf:
      return w * (-d / (sigma * sigma) - inv_d);
    case KernelForm::inverse_multiquadric: {
      // d/dx of 1/sqrt(1+|d|^2/s^2) is -d/s^2 * (1+|d|^2/s^2)^{-3/2}
      const double s2 = sigma * sigma;
      const double base = 1.0 + d.squaredNorm() / s2;
      const double mahal = std::exp(-0.5 * d.dot(inv_d));
      const Eigen::Vector3d dk = -(d / s2) * std::pow(base, -1.5);
      return mahal * dk + w * (-inv_d);
    }
  }
  return Eigen::Vector3d::Zero();
}

UGGCOutput uggc_forward(const VideoIndex& index, const Point4D& center,
                        const FeatureSet& features, const KernelSpec& kernel,
                        int temporal_radius, const GatingConfig& gate,
                        TemporalWindow window) {
  kernel.validate();
  const Neighborhood hood =
      index.query_radius(center, kernel.query_radius(), temporal_radius, window);
  if (hood.members.empty())
    throw std::domain_error("uggc_forward: empty neighborhood");

  UGGCOutput out;
  out.gaussian = estimate_gaussian(hood, gate);
  out.alpha = gating_alpha(out.gaussian.condition_number, gate);

  const int dim = features.dim();
  const int scale_count = static_cast<int>(kernel.scale_multipliers.size());
  out.scale_features.assign(static_cast<std::size_t>(scale_count),
                            std::vector<double>(static_cast<std::size_t>(dim), 0.0));

  std::vector<double> scale_weights(hood.members.size());
  for (int j = 0; j < scale_count; ++j) {
    const double sigma =
        kernel.base_radius * kernel.scale_multipliers[static_cast<std::size_t>(j)];
    std::vector<double>& agg = out.scale_features[static_cast<std::size_t>(j)];
    double total = 0.0;
    for (std::size_t m = 0; m < hood.members.size(); ++m) {
      const NeighborRef& member = hood.members[m];
      const double w =
          gaussian_weight(member.position, out.gaussian, kernel.kernel_form, sigma);
      scale_weights[m] = w;
      total += w;
      const std::span<const double> f = features.at(member.frame, member.point);
      for (int c = 0; c < dim; ++c)
        agg[static_cast<std::size_t>(c)] += w * f[static_cast<std::size_t>(c)];
    }
    if (total > 0.0 && std::isfinite(total)) {
      for (double& v : agg) v /= total;
    } else {
      // All weights underflowed; fall back to the unweighted mean.
      out.fallback_unweighted = true;
      std::fill(agg.begin(), agg.end(), 0.0);
      for (const NeighborRef& member : hood.members) {
        const std::span<const double> f = features.at(member.frame, member.point);
        for (int c = 0; c < dim; ++c)
          agg[static_cast<std::size_t>(c)] += f[static_cast<std::size_t>(c)];
      }
      for (double& v : agg) v /= static_cast<double>(hood.members.size());
    }
    if (j == kernel.standard_scale_index()) out.weights = scale_weights;
  }

  if (kernel.scale_fusion == ScaleFusion::concat) {
    out.feature.reserve(static_cast<std::size_t>(dim * scale_count));
    for (const std::vector<double>& agg : out.scale_features)
      out.feature.insert(out.feature.end(), agg.begin(), agg.end());
  } else {
    out.feature = gate_features(
        out.scale_features[static_cast<std::size_t>(kernel.standard_scale_index())],
        out.scale_features[static_cast<std::size_t>(kernel.robust_scale_index())],
        out.alpha);
  }
  return out;
}

std::vector<UGGCOutput> uggc_forward_batch(const VideoIndex& index,
                                           const FeatureSet& features,
                                           const KernelSpec& kernel,
                                           int temporal_radius,
                                           const GatingConfig& gate,
                                           TemporalWindow window) {
  const PointCloudVideo& video = index.video();
  std::vector<std::pair<int, int>> centers;
  centers.reserve(video.total_points());
  for (int t = 0; t < video.frame_count(); ++t)
    for (int i = 0; i < static_cast<int>(video.frames[static_cast<std::size_t>(t)]
                                             .points.size());
         ++i)
      centers.emplace_back(t, i);

  std::vector<UGGCOutput> results(centers.size());
  std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic, 16)
  for (long idx = 0; idx < static_cast<long>(centers.size()); ++idx) {
    if (failure) continue;
    const auto [t, i] = centers[static_cast<std::size_t>(idx)];
    try {
      const Point4D& center =
          video.frames[static_cast<std::size_t>(t)].points[static_cast<std::size_t>(i)];
      results[static_cast<std::size_t>(idx)] =
          uggc_forward(index, center, features, kernel, temporal_radius, gate, window);
    } catch (const std::exception& error) {
      // keep the first failure, tagged with the center it came from
      const auto wrapped = std::make_exception_ptr(std::domain_error(
          "uggc_forward_batch: center (frame " + std::to_string(t) + ", point " +
          std::to_string(i) + "): " + error.what()));
#pragma omp critical
      if (!failure) failure = wrapped;
    }
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

}  // namespace gats
