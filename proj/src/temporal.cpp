#include "gats/temporal.hpp"

#include <cmath>
#include <stdexcept>

namespace gats {

TemporalScale explicit_scale(double s) {
  if (!(s > 0.0) || !std::isfinite(s))
    throw std::domain_error("explicit_scale: s must be positive and finite");
  TemporalScale scale;
  scale.s = s;
  scale.provenance = TemporalScale::Provenance::explicit_scale;
  return scale;
}

TemporalScale scale_from_intervals(double dt, double dt_ref,
                                   ScaleConvention convention) {
  if (!(dt > 0.0) || !(dt_ref > 0.0))
    throw std::domain_error("scale_from_intervals: intervals must be positive");
  TemporalScale scale;
  scale.s = convention == ScaleConvention::dt_over_ref ? dt / dt_ref : dt_ref / dt;
  scale.dt = dt;
  scale.dt_ref = dt_ref;
  scale.provenance = TemporalScale::Provenance::from_intervals;
  return scale;
}

TemporalScale scale_from_frame_count(double t_seg, int frame_count, double dt_ref) {
  if (frame_count <= 0)
    throw std::domain_error("scale_from_frame_count: frame count must be positive");
  if (!(t_seg > 0.0) || !(dt_ref > 0.0))
    throw std::domain_error("scale_from_frame_count: durations must be positive");
  TemporalScale scale;
  scale.dt = t_seg / static_cast<double>(frame_count);
  scale.dt_ref = dt_ref;
  scale.s = *scale.dt / dt_ref;
  scale.provenance = TemporalScale::Provenance::from_frame_count;
  return scale;
}

TemporalScale scale_from_fps(double fps, double dt_ref) {
  if (!(fps > 0.0) || !(dt_ref > 0.0))
    throw std::domain_error("scale_from_fps: arguments must be positive");
  TemporalScale scale;
  scale.dt = 1.0 / fps;
  scale.dt_ref = dt_ref;
  scale.s = 1.0 / (dt_ref * fps);
  scale.provenance = TemporalScale::Provenance::from_fps;
  return scale;
}

VelocityEstimate relative_velocity(const Eigen::Vector3d& x_t,
                                   const Eigen::Vector3d& x_t_plus, int frame_gap,
                                   const TemporalScale& scale) {
  if (frame_gap < 1)
    throw std::domain_error("relative_velocity: frame_gap must be >= 1");
  if (!x_t.allFinite() || !x_t_plus.allFinite())
    throw std::domain_error("relative_velocity: non-finite positions");
  VelocityEstimate estimate;
  estimate.frame_gap = frame_gap;
  estimate.raw = (x_t_plus - x_t) / static_cast<double>(frame_gap);
  estimate.normalized = estimate.raw / scale.s;
  return estimate;
}

int scaled_temporal_radius(int r_t, const TemporalScale& scale) {
  if (r_t <= 0)
    throw std::domain_error("scaled_temporal_radius: r_t must be positive");
  const long rounded = std::lround(scale.s * static_cast<double>(r_t));
  return static_cast<int>(std::max(1L, rounded));
}

double phi(double u, const PhiSpec& spec) {
  switch (spec.form) {
    case PhiForm::linear:
      return -u;
    case PhiForm::logarithmic:
      return -std::log1p(u);
  }
  return 0.0;
}

double temporal_bias(int frame_distance, const TemporalScale& scale,
                     const PhiSpec& spec) {
  if (frame_distance < 0)
    throw std::domain_error("temporal_bias: frame_distance must be >= 0");
  return phi(scale.s * static_cast<double>(frame_distance), spec);
}

}  // namespace gats
