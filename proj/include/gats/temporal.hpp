#pragma once

#include <Eigen/Core>

#include <optional>

namespace gats {

// Conversion between the two s conventions. The default measures the frame
// interval in units of the reference interval (s = dt / dt_ref); the
// inverted convention is exposed for sensitivity probes.
enum class ScaleConvention { dt_over_ref, ref_over_dt };

// The temporal scaling factor with its provenance. Frame-index distances
// multiplied by s land on a fixed reference time scale, which is what makes
// downstream quantities independent of the frame partition.
struct TemporalScale {
  enum class Provenance { explicit_scale, from_intervals, from_frame_count, from_fps };

  double s = 1.0;
  std::optional<double> dt;      // seconds, when known
  std::optional<double> dt_ref;  // seconds, when known
  Provenance provenance = Provenance::explicit_scale;
};

TemporalScale explicit_scale(double s);
TemporalScale scale_from_intervals(double dt, double dt_ref,
                                   ScaleConvention convention = ScaleConvention::dt_over_ref);
// s = (t_seg / dt_ref) / frame_count, i.e. inversely proportional to the
// frame count of a fixed-duration segment.
TemporalScale scale_from_frame_count(double t_seg, int frame_count, double dt_ref);
// s = 1 / (dt_ref * fps).
TemporalScale scale_from_fps(double fps, double dt_ref);

struct VelocityEstimate {
  Eigen::Vector3d raw = Eigen::Vector3d::Zero();         // per frame-index unit
  Eigen::Vector3d normalized = Eigen::Vector3d::Zero();  // raw / s
  int frame_gap = 1;
};

// Discrete velocity between two observations of the same point, frame_gap
// frames apart: raw = displacement / frame_gap, normalized = raw / s.
VelocityEstimate relative_velocity(const Eigen::Vector3d& x_t,
                                   const Eigen::Vector3d& x_t_plus, int frame_gap,
                                   const TemporalScale& scale);

// r_t' = s * r_t rounded to the nearest whole frame count (half away from
// zero), never below 1.
int scaled_temporal_radius(int r_t, const TemporalScale& scale);

enum class PhiForm { linear, logarithmic };

struct PhiSpec {
  PhiForm form = PhiForm::linear;
};

// Bias map: phi(u) = -u (linear) or -ln(1 + u) (logarithmic); u >= 0.
double phi(double u, const PhiSpec& spec);

// Additive attention bias at a frame-index distance: phi(s * distance).
double temporal_bias(int frame_distance, const TemporalScale& scale,
                     const PhiSpec& spec);

}  // namespace gats
