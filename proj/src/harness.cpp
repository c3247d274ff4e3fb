#include "gats/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "gats/rng.hpp"

namespace gats {

namespace {

std::string format_param(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_param(const Eigen::Vector3d& v) {
  return format_param(v.x()) + " " + format_param(v.y()) + " " + format_param(v.z());
}

}  // namespace

// ---------------------------------------------------------------------------
// Trajectories and synthetic scenes
// ---------------------------------------------------------------------------

Trajectory Trajectory::constant(const Eigen::Vector3d& v, double duration) {
  if (!(duration > 0.0)) throw std::domain_error("Trajectory: duration must be positive");
  Trajectory t;
  t.kind = Kind::constant_velocity;
  t.duration = duration;
  t.velocity = v;
  return t;
}

Trajectory Trajectory::make_quadratic(const Eigen::Vector3d& v, const Eigen::Vector3d& a,
                                      double duration) {
  if (!(duration > 0.0)) throw std::domain_error("Trajectory: duration must be positive");
  Trajectory t;
  t.kind = Kind::quadratic;
  t.duration = duration;
  t.velocity = v;
  t.acceleration = a;
  return t;
}

Trajectory Trajectory::make_sinusoidal(const Eigen::Vector3d& amplitude, double omega,
                                       double phase, double duration) {
  if (!(duration > 0.0)) throw std::domain_error("Trajectory: duration must be positive");
  Trajectory t;
  t.kind = Kind::sinusoidal;
  t.duration = duration;
  t.amplitude = amplitude;
  t.angular_frequency = omega;
  t.phase = phase;
  return t;
}

Eigen::Vector3d Trajectory::position(double tau) const {
  switch (kind) {
    case Kind::constant_velocity:
      return velocity * tau;
    case Kind::quadratic:
      return velocity * tau + 0.5 * acceleration * (tau * tau);
    case Kind::sinusoidal:
      return amplitude * std::sin(angular_frequency * tau + phase);
  }
  return Eigen::Vector3d::Zero();
}

Eigen::Vector3d Trajectory::velocity_at(double tau) const {
  switch (kind) {
    case Kind::constant_velocity:
      return velocity;
    case Kind::quadratic:
      return velocity + acceleration * tau;
    case Kind::sinusoidal:
      return amplitude * (angular_frequency * std::cos(angular_frequency * tau + phase));
  }
  return Eigen::Vector3d::Zero();
}

Eigen::Vector3d Trajectory::acceleration_at(double tau) const {
  switch (kind) {
    case Kind::constant_velocity:
      return Eigen::Vector3d::Zero();
    case Kind::quadratic:
      return acceleration;
    case Kind::sinusoidal:
      return -amplitude * (angular_frequency * angular_frequency *
                           std::sin(angular_frequency * tau + phase));
  }
  return Eigen::Vector3d::Zero();
}

std::vector<Eigen::Vector3d> make_shape_template(ShapeKind kind, int count,
                                                 std::uint64_t seed) {
  if (count < 1) throw std::domain_error("make_shape_template: count must be >= 1");
  Rng rng(seed);
  std::vector<Eigen::Vector3d> points;
  points.reserve(static_cast<std::size_t>(count));

  switch (kind) {
    case ShapeKind::ball:
      for (int i = 0; i < count; ++i) {
        Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
        const double norm = dir.norm();
        if (norm > 0.0) dir /= norm;
        points.push_back(dir * std::cbrt(rng.uniform()));
      }
      break;
    case ShapeKind::disc:
      for (int i = 0; i < count; ++i) {
        const double r = std::sqrt(rng.uniform());
        const double theta = 2.0 * 3.14159265358979323846 * rng.uniform();
        points.emplace_back(r * std::cos(theta), r * std::sin(theta),
                            0.02 * rng.normal());
      }
      break;
    case ShapeKind::cluster: {
      std::array<Eigen::Vector3d, 4> centers;
      for (Eigen::Vector3d& c : centers)
        c = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      for (int i = 0; i < count; ++i) {
        const Eigen::Vector3d& c = centers[rng.bounded(centers.size())];
        points.push_back(c + 0.25 * Eigen::Vector3d(rng.normal(), rng.normal(),
                                                    rng.normal()));
      }
      break;
    }
  }

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const Eigen::Vector3d& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  double max_radius = 0.0;
  for (Eigen::Vector3d& p : points) {
    p -= centroid;
    max_radius = std::max(max_radius, p.norm());
  }
  if (max_radius > 0.0)
    for (Eigen::Vector3d& p : points) p /= max_radius;
  return points;
}

PointCloudVideo sample_video(const Trajectory& trajectory,
                             std::span<const Eigen::Vector3d> shape, int frame_count,
                             const SampleOptions& options) {
  if (frame_count < 2)
    throw std::domain_error("sample_video: frame_count must be >= 2");
  if (shape.empty()) throw std::domain_error("sample_video: empty shape template");

  PointCloudVideo video;
  video.segment_duration = trajectory.duration;
  video.frame_interval =
      options.endpoints == EndpointConvention::inclusive
          ? trajectory.duration / static_cast<double>(frame_count - 1)
          : trajectory.duration / static_cast<double>(frame_count);
  video.frames.resize(static_cast<std::size_t>(frame_count));

  for (int t = 0; t < frame_count; ++t) {
    const Eigen::Vector3d offset =
        trajectory.position(static_cast<double>(t) * video.frame_interval);
    Frame& frame = video.frames[static_cast<std::size_t>(t)];
    frame.points.resize(shape.size());
    for (std::size_t j = 0; j < shape.size(); ++j) {
      frame.points[j].position = shape[j] + offset;
      frame.points[j].frame_index = t;
    }
    if (options.shuffle_seed) {
      Rng rng(*options.shuffle_seed +
              0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(t + 1));
      rng.shuffle(frame.points);
    }
  }
  return video;
}

PointCloudVideo corrupt(const PointCloudVideo& video, const CorruptionSpec& spec,
                        std::uint64_t seed) {
  if (spec.noise_sigma < 0.0)
    throw std::domain_error("corrupt: noise_sigma must be non-negative");
  if (spec.drop_fraction < 0.0 || spec.drop_fraction >= 1.0)
    throw std::domain_error("corrupt: drop_fraction must be in [0, 1)");
  if (spec.density_gradient) {
    if (spec.density_gradient->axis < 0 || spec.density_gradient->axis > 2)
      throw std::domain_error("corrupt: density axis must be 0, 1 or 2");
    if (spec.density_gradient->strength < 0.0 || spec.density_gradient->strength > 1.0)
      throw std::domain_error("corrupt: density strength must be in [0, 1]");
  }

  PointCloudVideo out = video;
  Rng rng(seed);

  if (spec.noise_sigma > 0.0) {
    for (Frame& frame : out.frames)
      for (Point4D& p : frame.points) {
        p.position.x() += spec.noise_sigma * rng.normal();
        p.position.y() += spec.noise_sigma * rng.normal();
        p.position.z() += spec.noise_sigma * rng.normal();
      }
  }

  if (spec.drop_fraction > 0.0) {
    for (Frame& frame : out.frames) {
      std::vector<Point4D> kept;
      kept.reserve(frame.points.size());
      for (Point4D& p : frame.points)
        if (rng.uniform() >= spec.drop_fraction) kept.push_back(std::move(p));
      frame.points = std::move(kept);
    }
  }

  if (spec.occlusion_halfspace) {
    const Halfspace& half = *spec.occlusion_halfspace;
    for (Frame& frame : out.frames) {
      std::vector<Point4D> kept;
      kept.reserve(frame.points.size());
      for (Point4D& p : frame.points)
        if (half.normal.dot(p.position) <= half.offset) kept.push_back(std::move(p));
      frame.points = std::move(kept);
    }
  }

  if (spec.density_gradient && spec.density_gradient->strength > 0.0) {
    const int axis = spec.density_gradient->axis;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const Frame& frame : out.frames)
      for (const Point4D& p : frame.points) {
        lo = std::min(lo, p.position[axis]);
        hi = std::max(hi, p.position[axis]);
      }
    const double span = hi - lo;
    for (Frame& frame : out.frames) {
      std::vector<Point4D> kept;
      kept.reserve(frame.points.size());
      for (Point4D& p : frame.points) {
        const double u = span > 0.0 ? (p.position[axis] - lo) / span : 0.0;
        if (rng.uniform() >= spec.density_gradient->strength * u)
          kept.push_back(std::move(p));
      }
      frame.points = std::move(kept);
    }
  }

  for (int t = 0; t < out.frame_count(); ++t)
    if (out.frames[static_cast<std::size_t>(t)].points.empty())
      throw std::domain_error("corrupt: frame " + std::to_string(t) +
                              " left empty by corruption spec");
  return out;
}

double binomial_tail_ge(int n, int k) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  // Exact for the n used here: C(50, i) < 2^53.
  long double coeff = 1.0L;
  for (int i = 0; i < k; ++i) coeff = coeff * static_cast<long double>(n - i) /
                                      static_cast<long double>(i + 1);
  long double total = 0.0L;
  for (int i = k; i <= n; ++i) {
    total += coeff;
    coeff = coeff * static_cast<long double>(n - i) / static_cast<long double>(i + 1);
  }
  return static_cast<double>(total / std::pow(2.0L, static_cast<long double>(n)));
}

// ---------------------------------------------------------------------------
// Invariance suite
// ---------------------------------------------------------------------------

namespace {

int frames_for_dt(double t_seg, double dt, EndpointConvention endpoints) {
  const double steps = t_seg / dt;
  const int n = static_cast<int>(std::lround(steps));
  return endpoints == EndpointConvention::inclusive ? n + 1 : n;
}

double regression_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mean_x = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double mean_y = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mean_x) * (y[i] - mean_y);
    den += (x[i] - mean_x) * (x[i] - mean_x);
  }
  return num / den;
}

TokenSequence random_tokens(int frames, int per_frame, int dim, Rng& rng) {
  TokenSequence t = TokenSequence::zeros(frames, per_frame, dim);
  for (double& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

ExperimentReport run_invariance_suite(const InvarianceConfig& config) {
  ExperimentReport report;
  report.experiment = "invariance";
  report.parameters["t_seg"] = format_param(config.t_seg);
  report.parameters["dt_ref"] = format_param(config.dt_ref);
  report.parameters["linear_velocity"] = format_param(config.linear_velocity);
  report.parameters["seed"] = std::to_string(config.seed);
  report.parameters["endpoints"] =
      config.endpoints == EndpointConvention::inclusive ? "inclusive" : "exclusive";
  report.parameters["scale_convention"] =
      config.convention == ScaleConvention::dt_over_ref ? "dt_over_ref" : "ref_over_dt";
  {
    std::string fc;
    for (int f : config.frame_counts) fc += (fc.empty() ? "" : " ") + std::to_string(f);
    report.parameters["frame_counts"] = fc;
  }

  const auto shape =
      make_shape_template(ShapeKind::ball, config.template_points, config.seed);
  SampleOptions sample_options;
  sample_options.endpoints = config.endpoints;

  // (a) Exact velocity invariance for linear motion across the F sweep.
  if (config.frame_counts.size() >= 2) {
    const Trajectory linear =
        Trajectory::constant(config.linear_velocity, config.t_seg);
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(
        std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (int f : config.frame_counts) {
      const PointCloudVideo video = sample_video(linear, shape, f, sample_options);
      const TemporalScale scale =
          scale_from_intervals(video.frame_interval, config.dt_ref, config.convention);
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      std::size_t count = 0;
      for (int t = 0; t + 1 < video.frame_count(); ++t)
        for (std::size_t j = 0; j < shape.size(); ++j) {
          const VelocityEstimate est = relative_velocity(
              video.frames[static_cast<std::size_t>(t)].points[j].position,
              video.frames[static_cast<std::size_t>(t + 1)].points[j].position, 1,
              scale);
          lo = lo.cwiseMin(est.normalized);
          hi = hi.cwiseMax(est.normalized);
          mean += est.normalized;
          ++count;
        }
      mean /= static_cast<double>(count);
      TrialRecord trial;
      trial.name = "linear_F" + std::to_string(f);
      trial.metrics["dt"] = video.frame_interval;
      trial.metrics["s"] = scale.s;
      trial.metrics["vnorm_x"] = mean.x();
      trial.metrics["vnorm_y"] = mean.y();
      trial.metrics["vnorm_z"] = mean.z();
      report.trials.push_back(std::move(trial));
    }
    const double max_dev = (hi - lo).maxCoeff();
    report.checks.push_back(
        make_check("linear_velocity_max_deviation", max_dev, "lt", config.tol_velocity));
  } else {
    report.parameters["degenerate"] = "single frame count, invariance not evaluable";
    report.checks.push_back(
        make_check("linear_velocity_max_deviation", 0.0, "report", 0.0, 0.0, true));
  }

  // (b) Error law over the dt sweep: exact 1/2 |a| dt for quadratic motion,
  // log-log slope about 1 for sinusoidal motion.
  {
    const Trajectory quad = Trajectory::make_quadratic(
        config.quad_velocity, config.quad_acceleration, config.t_seg);
    const Trajectory sine = Trajectory::make_sinusoidal(
        config.sin_amplitude, config.sin_omega, config.sin_phase, config.t_seg);
    const double half_a = 0.5 * config.quad_acceleration.norm();

    double quad_rel_dev = 0.0;
    std::vector<double> log_dt;
    std::vector<double> log_err;
    for (int e = config.dt_exponent_lo; e <= config.dt_exponent_hi; ++e) {
      const double dt = std::ldexp(1.0, -e);
      const int frames = frames_for_dt(config.t_seg, dt, config.endpoints);

      const PointCloudVideo video_q = sample_video(quad, shape, frames, sample_options);
      const PointCloudVideo video_s = sample_video(sine, shape, frames, sample_options);

      double sum_err_q = 0.0;
      double sum_err_s = 0.0;
      std::size_t count = 0;
      for (int t = 0; t + 1 < frames; ++t) {
        const double tau = static_cast<double>(t) * video_q.frame_interval;
        for (std::size_t j = 0; j < shape.size(); ++j) {
          const Eigen::Vector3d vq =
              (video_q.frames[static_cast<std::size_t>(t + 1)].points[j].position -
               video_q.frames[static_cast<std::size_t>(t)].points[j].position) /
              video_q.frame_interval;
          const double err_q = (vq - quad.velocity_at(tau)).norm();
          sum_err_q += err_q;
          if (half_a > 0.0)
            quad_rel_dev =
                std::max(quad_rel_dev, std::abs(err_q - half_a * video_q.frame_interval) /
                                           (half_a * video_q.frame_interval));
          const Eigen::Vector3d vs =
              (video_s.frames[static_cast<std::size_t>(t + 1)].points[j].position -
               video_s.frames[static_cast<std::size_t>(t)].points[j].position) /
              video_s.frame_interval;
          sum_err_s += (vs - sine.velocity_at(tau)).norm();
          ++count;
        }
      }
      TrialRecord trial;
      trial.name = "errlaw_dt_2^-" + std::to_string(e);
      trial.metrics["dt"] = dt;
      trial.metrics["quad_mean_err"] = sum_err_q / static_cast<double>(count);
      trial.metrics["sin_mean_err"] = sum_err_s / static_cast<double>(count);
      report.trials.push_back(std::move(trial));
      log_dt.push_back(std::log(dt));
      log_err.push_back(std::log(sum_err_s / static_cast<double>(count)));
    }
    report.checks.push_back(
        make_check("quad_error_rel_deviation", quad_rel_dev, "lt", config.tol_quad_rel));
    const double slope = regression_slope(log_dt, log_err);
    report.checks.push_back(make_check("sin_error_loglog_slope", slope, "in_range",
                                       config.slope_lo, config.slope_hi));
  }

  // (c) Bias invariance across two partitions of the same segment, plus
  // argmax preservation over matched key sets.
  {
    const int f1 = config.bias_coarse_frames;
    const int f2 = 2 * f1 - 1;
    const double dt1 = config.t_seg / static_cast<double>(f1 - 1);
    const double dt2 = config.t_seg / static_cast<double>(f2 - 1);
    const TemporalScale s1 = scale_from_intervals(dt1, config.dt_ref, config.convention);
    const TemporalScale s2 = scale_from_intervals(dt2, config.dt_ref, config.convention);

    double max_bias_dev = 0.0;
    for (int d = 0; d < f1; ++d)
      max_bias_dev = std::max(max_bias_dev,
                              std::abs(temporal_bias(d, s1, config.phi) -
                                       temporal_bias(2 * d, s2, config.phi)));
    report.checks.push_back(make_check("bias_matched_tau_max_deviation", max_bias_dev,
                                       "le", config.tol_bias));

    // Same key contents at matched physical instants; extra keys in the fine
    // partition carry fresh content and stay out of the matched comparison.
    const int per_frame = 2;
    const int dim = config.bias_token_dim;
    AttentionSpec spec;
    spec.model_dim = dim;
    spec.head_count = 1;
    spec.phi = config.phi;
    Rng rng(config.seed ^ 0xb1a5ULL);
    const TokenSequence q1 = random_tokens(f1, per_frame, dim, rng);
    const TokenSequence k1 = random_tokens(f1, per_frame, dim, rng);
    TokenSequence q2 = random_tokens(f2, per_frame, dim, rng);
    TokenSequence k2 = random_tokens(f2, per_frame, dim, rng);
    for (int t = 0; t < f1; ++t)
      for (int n = 0; n < per_frame; ++n)
        for (int c = 0; c < dim; ++c) {
          q2.at(2 * t, n, c) = q1.at(t, n, c);
          k2.at(2 * t, n, c) = k1.at(t, n, c);
        }
    const Eigen::MatrixXd l1 = attention_logits(q1, k1, spec, s1, 0);
    const Eigen::MatrixXd l2 = attention_logits(q2, k2, spec, s2, 0);

    int argmax_mismatches = 0;
    double max_logit_dev = 0.0;
    for (int i = 0; i < f1 * per_frame; ++i) {
      const int qi2 = (i / per_frame) * 2 * per_frame + (i % per_frame);
      int best1 = 0;
      int best2 = 0;
      for (int j = 0; j < f1 * per_frame; ++j) {
        const int kj2 = (j / per_frame) * 2 * per_frame + (j % per_frame);
        max_logit_dev = std::max(max_logit_dev, std::abs(l1(i, j) - l2(qi2, kj2)));
        if (l1(i, j) > l1(i, best1)) best1 = j;
        const int bj2 = (best2 / per_frame) * 2 * per_frame + (best2 % per_frame);
        if (l2(qi2, kj2) > l2(qi2, bj2)) best2 = j;
      }
      if (best1 != best2) ++argmax_mismatches;
    }
    report.checks.push_back(make_check("bias_matched_logit_max_deviation",
                                       max_logit_dev, "le", config.tol_bias));
    report.checks.push_back(make_check("bias_argmax_mismatches",
                                       static_cast<double>(argmax_mismatches), "le", 0.0));
  }

  // (d) Scaled temporal radius: r_t counts frames at the reference rate, so
  // turning it into actual frames uses the frames-per-reference-interval
  // factor dt_ref/dt. The physical span r_t' * dt of two samplings of one
  // segment then differs by at most one frame interval (rounding).
  {
    double max_span_gap = 0.0;
    for (int f : config.frame_counts) {
      const int f_fine = 2 * f - 1;
      const double dt1 = config.t_seg / static_cast<double>(f - 1);
      const double dt2 = config.t_seg / static_cast<double>(f_fine - 1);
      const TemporalScale s1 =
          scale_from_intervals(dt1, config.dt_ref, ScaleConvention::ref_over_dt);
      const TemporalScale s2 =
          scale_from_intervals(dt2, config.dt_ref, ScaleConvention::ref_over_dt);
      const double span1 =
          static_cast<double>(scaled_temporal_radius(config.temporal_radius, s1)) * dt1;
      const double span2 =
          static_cast<double>(scaled_temporal_radius(config.temporal_radius, s2)) * dt2;
      const double gap = std::abs(span1 - span2);
      const double allowed = std::max(dt1, dt2);
      max_span_gap = std::max(max_span_gap, gap - allowed);
      TrialRecord trial;
      trial.name = "radius_span_F" + std::to_string(f);
      trial.metrics["span_coarse"] = span1;
      trial.metrics["span_fine"] = span2;
      report.trials.push_back(std::move(trial));
    }
    // margin <= 0 means every pair stayed within one frame interval
    report.checks.push_back(
        make_check("radius_span_excess_over_one_interval", max_span_gap, "le", 1e-12));
  }

  // (e) Scaling law s(F) = C / F.
  {
    const double c = config.t_seg / config.dt_ref;
    double max_rel_dev = 0.0;
    int monotone_violations = 0;
    double previous = std::numeric_limits<double>::infinity();
    for (int f = 1; f <= config.scaling_law_max_frames; ++f) {
      const TemporalScale scale = scale_from_frame_count(config.t_seg, f, config.dt_ref);
      max_rel_dev = std::max(max_rel_dev,
                             std::abs(scale.s * static_cast<double>(f) - c) / c);
      if (!(scale.s < previous)) ++monotone_violations;
      previous = scale.s;
    }
    report.checks.push_back(
        make_check("scaling_law_max_rel_deviation", max_rel_dev, "lt",
                   config.tol_scaling_law));
    report.checks.push_back(make_check("scaling_law_monotone_violations",
                                       static_cast<double>(monotone_violations), "le",
                                       0.0));

    double fps_dev = 0.0;
    for (const double fps : {10.0, 30.0, 60.0, 120.0}) {
      const TemporalScale scale = scale_from_fps(fps, config.dt_ref);
      fps_dev = std::max(fps_dev,
                         std::abs(scale.s * fps * config.dt_ref - 1.0));
    }
    report.checks.push_back(
        make_check("fps_law_max_deviation", fps_dev, "lt", config.tol_scaling_law));
  }

  return report;
}

// ---------------------------------------------------------------------------
// Robustness suite
// ---------------------------------------------------------------------------

namespace {

struct VideoStats {
  double mean_cond = 0.0;
  double mean_alpha = 0.0;
};

VideoStats gaussian_stats(const PointCloudVideo& video, const KernelSpec& kernel,
                          const GatingConfig& gate, int temporal_radius) {
  const VideoIndex index(video);
  VideoStats stats;
  std::size_t count = 0;
  for (int t = 0; t < video.frame_count(); ++t) {
    const Frame& frame = video.frames[static_cast<std::size_t>(t)];
    for (const Point4D& p : frame.points) {
      const Neighborhood hood =
          index.query_radius(p, kernel.query_radius(), temporal_radius);
      const LocalGaussian g = estimate_gaussian(hood, gate);
      stats.mean_cond += g.condition_number;
      stats.mean_alpha += gating_alpha(g.condition_number, gate);
      ++count;
    }
  }
  stats.mean_cond /= static_cast<double>(count);
  stats.mean_alpha /= static_cast<double>(count);
  return stats;
}

// Plain center-based Gaussian RBF aggregation, the distribution-blind
// baseline the drift ratio compares against.
std::vector<double> euclidean_aggregate(const VideoIndex& index, const Point4D& center,
                                        const FeatureSet& features, double radius,
                                        double sigma, int temporal_radius) {
  const Neighborhood hood = index.query_radius(center, radius, temporal_radius);
  std::vector<double> out(static_cast<std::size_t>(features.dim()), 0.0);
  double total = 0.0;
  for (const NeighborRef& m : hood.members) {
    const double w = std::exp(-(m.position - center.position).squaredNorm() /
                              (2.0 * sigma * sigma));
    total += w;
    const std::span<const double> f = features.at(m.frame, m.point);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * f[c];
  }
  if (total > 0.0)
    for (double& v : out) v /= total;
  return out;
}

double feature_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sum);
}

}  // namespace

ExperimentReport run_robustness_suite(const RobustnessConfig& config) {
  ExperimentReport report;
  report.experiment = "robustness";
  report.parameters["trials"] = std::to_string(config.trials);
  report.parameters["noise_sigma"] = format_param(config.noise_sigma);
  report.parameters["occlusion_fraction"] = format_param(config.occlusion_fraction);
  report.parameters["drift_noise_sigma"] = format_param(config.drift_noise_sigma);
  report.parameters["seed"] = std::to_string(config.seed);

  int cond_increases = 0;
  int alpha_decreases = 0;
  std::vector<double> drift_ratios;

  for (int trial = 0; trial < config.trials; ++trial) {
    const std::uint64_t trial_seed =
        config.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(trial + 1);
    const auto shape =
        make_shape_template(ShapeKind::ball, config.points_per_frame, trial_seed);
    const Trajectory motion =
        Trajectory::constant(Eigen::Vector3d(0.2, 0.0, 0.0), config.t_seg);
    const PointCloudVideo clean = sample_video(motion, shape, config.frames);

    // Occlusion plane through the cloud: random direction, offset at the
    // (1 - fraction) quantile so about `fraction` of the points fall away.
    Rng rng(trial_seed ^ 0x0cc1ULL);
    Eigen::Vector3d normal(rng.normal(), rng.normal(), rng.normal());
    normal.normalize();
    std::vector<double> projections;
    for (const Frame& frame : clean.frames)
      for (const Point4D& p : frame.points) projections.push_back(normal.dot(p.position));
    std::sort(projections.begin(), projections.end());
    const std::size_t cut = static_cast<std::size_t>(
        (1.0 - config.occlusion_fraction) * static_cast<double>(projections.size()));
    CorruptionSpec occlusion_spec;
    occlusion_spec.noise_sigma = config.noise_sigma;
    occlusion_spec.occlusion_halfspace =
        Halfspace{normal, projections[std::min(cut, projections.size() - 1)]};

    const PointCloudVideo corrupted = corrupt(clean, occlusion_spec, trial_seed);
    const VideoStats before =
        gaussian_stats(clean, config.kernel, config.gate, config.temporal_radius);
    const VideoStats after =
        gaussian_stats(corrupted, config.kernel, config.gate, config.temporal_radius);
    if (after.mean_cond > before.mean_cond) ++cond_increases;
    if (after.mean_alpha < before.mean_alpha) ++alpha_decreases;

    // Drift under count-preserving noise: same centers by index.
    CorruptionSpec noise_spec;
    noise_spec.noise_sigma = config.drift_noise_sigma;
    const PointCloudVideo noisy = corrupt(clean, noise_spec, trial_seed ^ 0xd21fULL);
    const VideoIndex clean_index(clean);
    const VideoIndex noisy_index(noisy);
    const FeatureSet clean_features = FeatureSet::from_positions(clean);
    const FeatureSet noisy_features = FeatureSet::from_positions(noisy);

    double drift_uggc = 0.0;
    double drift_euclid = 0.0;
    std::size_t centers = 0;
    const double sigma = config.kernel.base_radius;
    for (int t = 0; t < clean.frame_count(); ++t) {
      const Frame& frame = clean.frames[static_cast<std::size_t>(t)];
      for (std::size_t i = 0; i < frame.points.size();
           i += static_cast<std::size_t>(config.drift_center_stride)) {
        const Point4D& center_clean = frame.points[i];
        const Point4D& center_noisy =
            noisy.frames[static_cast<std::size_t>(t)].points[i];
        const UGGCOutput clean_out =
            uggc_forward(clean_index, center_clean, clean_features, config.kernel,
                         config.temporal_radius, config.gate);
        const UGGCOutput noisy_out =
            uggc_forward(noisy_index, center_noisy, noisy_features, config.kernel,
                         config.temporal_radius, config.gate);
        drift_uggc += feature_distance(clean_out.feature, noisy_out.feature);

        const auto clean_euclid = euclidean_aggregate(
            clean_index, center_clean, clean_features, config.kernel.query_radius(),
            sigma, config.temporal_radius);
        const auto noisy_euclid = euclidean_aggregate(
            noisy_index, center_noisy, noisy_features, config.kernel.query_radius(),
            sigma, config.temporal_radius);
        drift_euclid += feature_distance(clean_euclid, noisy_euclid);
        ++centers;
      }
    }
    drift_uggc /= static_cast<double>(centers);
    drift_euclid /= static_cast<double>(centers);
    const double ratio = drift_euclid > 0.0 ? drift_uggc / drift_euclid : 1.0;
    drift_ratios.push_back(ratio);

    TrialRecord record;
    record.name = "trial_" + std::to_string(trial);
    record.metrics["cond_clean"] = before.mean_cond;
    record.metrics["cond_corrupt"] = after.mean_cond;
    record.metrics["alpha_clean"] = before.mean_alpha;
    record.metrics["alpha_corrupt"] = after.mean_alpha;
    record.metrics["drift_uggc"] = drift_uggc;
    record.metrics["drift_euclid"] = drift_euclid;
    record.metrics["drift_ratio"] = ratio;
    report.trials.push_back(std::move(record));
  }

  const double p_cond = binomial_tail_ge(config.trials, cond_increases);
  const double p_alpha = binomial_tail_ge(config.trials, alpha_decreases);
  report.checks.push_back(
      make_check("cond_increase_sign_test_p", p_cond, "lt", config.sign_test_p));
  report.checks.push_back(
      make_check("alpha_decrease_sign_test_p", p_alpha, "lt", config.sign_test_p));

  double mean_ratio = 0.0;
  for (double r : drift_ratios) mean_ratio += r;
  mean_ratio /= static_cast<double>(drift_ratios.size());
  double var = 0.0;
  for (double r : drift_ratios) var += (r - mean_ratio) * (r - mean_ratio);
  var /= std::max<double>(1.0, static_cast<double>(drift_ratios.size() - 1));
  const double half_ci =
      1.96 * std::sqrt(var / static_cast<double>(drift_ratios.size()));
  report.parameters["drift_ratio_ci95"] =
      format_param(mean_ratio - half_ci) + " .. " + format_param(mean_ratio + half_ci);
  report.checks.push_back(
      make_check("drift_ratio_uggc_over_euclidean", mean_ratio, "report", 0.0, 0.0,
                 true));
  return report;
}

// ---------------------------------------------------------------------------
// Gradient checks
// ---------------------------------------------------------------------------

ExperimentReport run_gradient_checks(const GradCheckConfig& config) {
  ExperimentReport report;
  report.experiment = "gradcheck";
  report.parameters["trials"] = std::to_string(config.trials);
  report.parameters["fd_step"] = format_param(config.fd_step);
  report.parameters["seed"] = std::to_string(config.seed);

  Rng rng(config.seed);
  const double h = config.fd_step;

  double max_weight_err = 0.0;
  for (int trial = 0; trial < config.trials; ++trial) {
    // A random well-conditioned Gaussian around a random mean.
    Neighborhood hood;
    hood.center.position = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    const int members = 8 + static_cast<int>(rng.bounded(24));
    for (int i = 0; i < members; ++i) {
      NeighborRef ref;
      ref.frame = 0;
      ref.point = i;
      ref.position = hood.center.position +
                     0.3 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
      hood.members.push_back(ref);
    }
    const LocalGaussian g = estimate_gaussian(hood);
    const KernelForm form = trial % 2 == 0 ? KernelForm::gaussian_rbf
                                           : KernelForm::inverse_multiquadric;
    const double sigma = 0.2 + rng.uniform();
    const Eigen::Vector3d x =
        g.mean + 0.4 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());

    const Eigen::Vector3d analytic = gaussian_weight_gradient(x, g, form, sigma);
    Eigen::Vector3d numeric;
    for (int c = 0; c < 3; ++c) {
      Eigen::Vector3d hi = x;
      Eigen::Vector3d lo = x;
      hi[c] += h;
      lo[c] -= h;
      numeric[c] = (gaussian_weight(hi, g, form, sigma) -
                    gaussian_weight(lo, g, form, sigma)) /
                   (2.0 * h);
    }
    const double denom = std::max({analytic.norm(), numeric.norm(), 1e-12});
    max_weight_err = std::max(max_weight_err, (analytic - numeric).norm() / denom);
  }
  report.checks.push_back(make_check("gaussian_weight_grad_max_rel_err", max_weight_err,
                                     "lt", config.tolerance));

  double max_attn_err = 0.0;
  for (int trial = 0; trial < config.trials; ++trial) {
    AttentionSpec spec;
    spec.model_dim = 8;
    spec.head_count = 2;
    spec.beta = {0.5, 1.5};
    const TemporalScale scale = explicit_scale(0.5 + rng.uniform());
    TokenSequence q = random_tokens(2, 2, 8, rng);
    const TokenSequence k = random_tokens(2, 2, 8, rng);
    const TokenSequence v = random_tokens(2, 2, 8, rng);
    const TokenSequence cotangent = random_tokens(2, 2, 8, rng);

    const TokenSequence analytic =
        attention_backward_q(q, k, v, spec, scale, cotangent);

    const auto objective = [&](const TokenSequence& probe) {
      const TokenSequence out = attention_forward(probe, k, v, spec, scale);
      double sum = 0.0;
      for (std::size_t i = 0; i < out.data.size(); ++i)
        sum += out.data[i] * cotangent.data[i];
      return sum;
    };

    double gnorm2 = 0.0;
    double dnorm2 = 0.0;
    for (std::size_t i = 0; i < q.data.size(); ++i) {
      const double original = q.data[i];
      q.data[i] = original + h;
      const double up = objective(q);
      q.data[i] = original - h;
      const double down = objective(q);
      q.data[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double diff = numeric - analytic.data[i];
      gnorm2 += numeric * numeric;
      dnorm2 += diff * diff;
    }
    double anorm2 = 0.0;
    for (double gvalue : analytic.data) anorm2 += gvalue * gvalue;
    const double denom = std::max({std::sqrt(gnorm2), std::sqrt(anorm2), 1e-12});
    max_attn_err = std::max(max_attn_err, std::sqrt(dnorm2) / denom);
  }
  report.checks.push_back(make_check("attention_grad_q_max_rel_err", max_attn_err, "lt",
                                     config.tolerance));
  return report;
}

}  // namespace gats
