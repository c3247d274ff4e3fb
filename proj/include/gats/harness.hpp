#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gats/attention.hpp"
#include "gats/gaussian.hpp"
#include "gats/pcvideo.hpp"
#include "gats/temporal.hpp"
#include "gats/uggc.hpp"

namespace gats {

// Continuous ground-truth motion with closed-form position, velocity and
// acceleration; the oracle against which sampled sequences are judged.
struct Trajectory {
  enum class Kind { constant_velocity, quadratic, sinusoidal };

  Kind kind = Kind::constant_velocity;
  double duration = 1.0;  // seconds
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d acceleration = Eigen::Vector3d::Zero();
  Eigen::Vector3d amplitude = Eigen::Vector3d::Zero();
  double angular_frequency = 0.0;
  double phase = 0.0;

  static Trajectory constant(const Eigen::Vector3d& v, double duration);
  static Trajectory make_quadratic(const Eigen::Vector3d& v, const Eigen::Vector3d& a,
                                   double duration);
  static Trajectory make_sinusoidal(const Eigen::Vector3d& amplitude, double omega,
                                    double phase, double duration);

  Eigen::Vector3d position(double tau) const;
  Eigen::Vector3d velocity_at(double tau) const;
  Eigen::Vector3d acceleration_at(double tau) const;
};

enum class ShapeKind { ball, disc, cluster };

// Random point set centered at the origin and normalized to unit bounding
// radius, so radii measured in scene units have a fixed meaning.
std::vector<Eigen::Vector3d> make_shape_template(ShapeKind kind, int count,
                                                 std::uint64_t seed);

// inclusive: dt = T_seg/(F-1), frames span [0, T_seg].
// exclusive: dt = T_seg/F, frames span [0, T_seg - dt].
enum class EndpointConvention { inclusive, exclusive };

struct SampleOptions {
  EndpointConvention endpoints = EndpointConvention::inclusive;
  // When set, each frame's storage order is shuffled (sensors do not
  // preserve point order); the sampled geometry is unchanged.
  std::optional<std::uint64_t> shuffle_seed;
};

// Rigidly translates the shape along the trajectory, one frame per sample
// instant. Deterministic for fixed inputs.
PointCloudVideo sample_video(const Trajectory& trajectory,
                             std::span<const Eigen::Vector3d> shape, int frame_count,
                             const SampleOptions& options = {});

struct Halfspace {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitX();
  double offset = 0.0;  // removes points with normal . x > offset
};

struct DensityGradient {
  int axis = 0;            // 0..2
  double strength = 0.0;   // drop probability ramps to this at the far end
};

struct CorruptionSpec {
  double noise_sigma = 0.0;     // additive isotropic Gaussian, scene units
  double drop_fraction = 0.0;   // [0, 1)
  std::optional<Halfspace> occlusion_halfspace;
  std::optional<DensityGradient> density_gradient;
};

// Applies noise, random drops, occlusion and density thinning in that fixed
// order. Deterministic per seed. Throws when a frame ends up empty.
PointCloudVideo corrupt(const PointCloudVideo& video, const CorruptionSpec& spec,
                        std::uint64_t seed);

// ---------------------------------------------------------------------------
// Experiment reports
// ---------------------------------------------------------------------------

struct TrialRecord {
  std::string name;
  std::map<std::string, double> metrics;
};

// One verdict with the tolerance it was judged against. pass is always
// recomputable from (value, comparator, tolerance), which keeps reports
// auditable.
struct CheckRecord {
  std::string name;
  double value = 0.0;
  std::string comparator;  // "lt" | "le" | "ge" | "in_range" | "report"
  double tolerance = 0.0;
  double tolerance_hi = 0.0;  // upper bound for in_range
  bool informational = false;
  bool pass = false;
};

bool evaluate_check(const CheckRecord& check);
CheckRecord make_check(std::string name, double value, std::string comparator,
                       double tolerance, double tolerance_hi = 0.0,
                       bool informational = false);

struct ExperimentReport {
  std::string experiment;
  std::map<std::string, std::string> parameters;
  std::vector<TrialRecord> trials;
  std::vector<CheckRecord> checks;

  bool passed() const;
};

enum class ReportFormat { json, csv, markdown };

std::string render_report(const ExperimentReport& report, ReportFormat format);
void emit_report(const ExperimentReport& report, ReportFormat format,
                 const std::filesystem::path& path);
ExperimentReport report_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Verification suites
// ---------------------------------------------------------------------------

struct InvarianceConfig {
  double t_seg = 1.0;
  double dt_ref = 0.25;
  std::vector<int> frame_counts{5, 10, 20, 40};
  Eigen::Vector3d linear_velocity{1.0, 0.5, -0.25};
  Eigen::Vector3d quad_velocity{1.0, 0.0, 0.5};
  Eigen::Vector3d quad_acceleration{0.0, 2.0, -1.0};
  Eigen::Vector3d sin_amplitude{1.0, 0.5, 0.75};
  double sin_omega = 6.0;
  double sin_phase = 0.3;
  int dt_exponent_lo = 3;   // sweep dt = 2^-e for e in [lo, hi]
  int dt_exponent_hi = 9;
  int bias_coarse_frames = 5;  // fine partition has 2F-1 frames
  int bias_token_dim = 8;
  int template_points = 32;
  int temporal_radius = 3;
  std::uint64_t seed = 2024;
  EndpointConvention endpoints = EndpointConvention::inclusive;
  ScaleConvention convention = ScaleConvention::dt_over_ref;
  PhiSpec phi;
  int scaling_law_max_frames = 10000;

  double tol_velocity = 1e-12;
  double tol_quad_rel = 1e-9;
  double slope_lo = 0.9;
  double slope_hi = 1.1;
  double tol_bias = 1e-15;
  double tol_scaling_law = 1e-12;
};

// Runs (a) exact velocity invariance for linear motion, (b) the error-vs-dt
// law for smooth motion, (c) bias invariance across partitions, (d) scaled
// temporal radius span consistency, (e) the s(F) scaling law.
ExperimentReport run_invariance_suite(const InvarianceConfig& config = {});

struct RobustnessConfig {
  int trials = 50;
  int frames = 4;
  int points_per_frame = 256;
  double noise_sigma = 0.01;
  double occlusion_fraction = 0.4;
  double drift_noise_sigma = 0.02;
  int drift_center_stride = 4;
  KernelSpec kernel;
  GatingConfig gate;
  int temporal_radius = 1;
  double t_seg = 1.0;
  std::uint64_t seed = 7;
  double sign_test_p = 0.01;
};

// Paired clean/corrupted trials: condition-number and gate direction under
// occlusion+noise (sign tests), and the UGGC vs Euclidean-kernel drift ratio
// under position noise (reported, no target).
ExperimentReport run_robustness_suite(const RobustnessConfig& config = {});

struct GradCheckConfig {
  int trials = 100;
  std::uint64_t seed = 11;
  double fd_step = 1e-5;
  double tolerance = 1e-4;
};

// Central finite differences against the analytic gradients of the Gaussian
// weight (w.r.t. position) and of attention output (w.r.t. queries).
ExperimentReport run_gradient_checks(const GradCheckConfig& config = {});

// P(X >= k) for X ~ Binomial(n, 1/2), evaluated exactly.
double binomial_tail_ge(int n, int k);

// ---------------------------------------------------------------------------
// Config files: flat `key = value` lines under [section] headers, `#`
// comments. Errors carry 1-based line numbers.
// ---------------------------------------------------------------------------

class ConfigFile {
 public:
  static ConfigFile load(const std::filesystem::path& path);
  static ConfigFile parse(const std::string& text, const std::string& origin);

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  std::uint64_t get_uint(const std::string& section, const std::string& key,
                         std::uint64_t fallback) const;
  Eigen::Vector3d get_vector3(const std::string& section, const std::string& key,
                              const Eigen::Vector3d& fallback) const;
  std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                const std::vector<int>& fallback) const;
  std::vector<double> get_double_list(const std::string& section,
                                      const std::string& key,
                                      const std::vector<double>& fallback) const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::string origin_;
  std::map<std::string, std::map<std::string, Entry>> sections_;

  const Entry* find(const std::string& section, const std::string& key) const;
  [[noreturn]] void fail(const Entry& entry, const std::string& message) const;
};

InvarianceConfig parse_invariance_config(const ConfigFile& file);
RobustnessConfig parse_robustness_config(const ConfigFile& file);
GradCheckConfig parse_gradcheck_config(const ConfigFile& file);
// Sections [block], [attention], [kernel], [gate].
BlockConfig parse_block_config(const ConfigFile& file);

}  // namespace gats
