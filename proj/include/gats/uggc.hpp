#pragma once

#include <Eigen/Core>

#include <vector>

#include "gats/gaussian.hpp"
#include "gats/pcvideo.hpp"

namespace gats {

enum class KernelForm { gaussian_rbf, inverse_multiquadric };

// How the per-scale aggregates combine into the output feature:
//   gated  - scale closest to multiplier 1 is the standard branch, the
//            largest scale is the robust branch, fused by the uncertainty
//            gate (default)
//   concat - all per-scale aggregates concatenated (dim * scale count)
enum class ScaleFusion { gated, concat };

struct KernelSpec {
  double base_radius = 0.3;
  std::vector<double> scale_multipliers{0.5, 1.0, 3.0};  // positive, ascending
  KernelForm kernel_form = KernelForm::gaussian_rbf;
  ScaleFusion scale_fusion = ScaleFusion::gated;

  // One member set serves every scale: the spatial window is taken at the
  // largest multiplier.
  double query_radius() const { return base_radius * scale_multipliers.back(); }

  int standard_scale_index() const;
  int robust_scale_index() const {
    return static_cast<int>(scale_multipliers.size()) - 1;
  }

  void validate() const;
};

// Aggregation weight of a point at x under the local Gaussian g:
//   w = k_sigma(x - mu) * exp(-1/2 (x - mu)^T inv(Sigma') (x - mu))
// with the geometric kernel
//   gaussian_rbf:          k_sigma(d) = exp(-|d|^2 / (2 sigma^2))
//   inverse_multiquadric:  k_sigma(d) = 1 / sqrt(1 + |d|^2 / sigma^2)
double gaussian_weight(const Eigen::Vector3d& x, const LocalGaussian& g,
                       KernelForm form, double sigma);

// Analytic gradient of gaussian_weight with respect to x (mu, Sigma fixed).
Eigen::Vector3d gaussian_weight_gradient(const Eigen::Vector3d& x,
                                         const LocalGaussian& g, KernelForm form,
                                         double sigma);

struct UGGCOutput {
  std::vector<double> feature;                      // fused output
  std::vector<std::vector<double>> scale_features;  // one aggregate per multiplier
  std::vector<double> weights;  // standard-scale weights, canonical member order
  double alpha = 1.0;
  LocalGaussian gaussian;
  bool fallback_unweighted = false;  // some scale had zero total weight
};

// Gaussian-weighted aggregation around one center: a single window query at
// the largest scale, one Gaussian estimate, per-scale normalized weighted
// means, and gated fusion of the standard and robust branches.
UGGCOutput uggc_forward(const VideoIndex& index, const Point4D& center,
                        const FeatureSet& features, const KernelSpec& kernel,
                        int temporal_radius, const GatingConfig& gate = {},
                        TemporalWindow window = TemporalWindow::symmetric);

// Every point of the video as a center, outputs ordered by (frame, point).
std::vector<UGGCOutput> uggc_forward_batch(
    const VideoIndex& index, const FeatureSet& features, const KernelSpec& kernel,
    int temporal_radius, const GatingConfig& gate = {},
    TemporalWindow window = TemporalWindow::symmetric);

}  // namespace gats
