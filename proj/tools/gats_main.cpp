#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "gats/attention.hpp"
#include "gats/harness.hpp"
#include "gats/pcvideo.hpp"
#include "gats/temporal.hpp"
#include "gats/uggc.hpp"

namespace {

using namespace gats;

ReportFormat parse_format(const std::string& name) {
  if (name == "json") return ReportFormat::json;
  if (name == "csv") return ReportFormat::csv;
  if (name == "markdown") return ReportFormat::markdown;
  throw CLI::ValidationError("--format", "must be json, csv or markdown");
}

void print_checks(const ExperimentReport& report) {
  for (const CheckRecord& check : report.checks) {
    const char* status = check.informational ? "INFO" : (check.pass ? "PASS" : "FAIL");
    std::printf("[%s] %s = %.17g", status, check.name.c_str(), check.value);
    if (check.comparator == "in_range")
      std::printf(" (expected in [%g, %g])", check.tolerance, check.tolerance_hi);
    else if (check.comparator != "report")
      std::printf(" (expected %s %g)", check.comparator.c_str(), check.tolerance);
    std::printf("\n");
  }
}

struct GenOptions {
  std::string trajectory = "constant";
  std::string shape = "ball";
  std::string out;
  int frames = 24;
  int points = 2048;
  double t_seg = 1.0;
  std::uint64_t seed = 1;
  bool binary = false;
  bool exclusive_endpoints = false;
  std::vector<double> velocity{1.0, 0.0, 0.0};
  std::vector<double> acceleration{0.0, 1.0, 0.0};
  std::vector<double> amplitude{1.0, 0.5, 0.25};
  double omega = 6.0;
  double phase = 0.0;
  double noise = 0.0;
  double drop = 0.0;
  std::vector<double> occlude;  // nx ny nz offset
  int density_axis = -1;
  double density_strength = 0.0;
};

int run_gen(const GenOptions& opt) {
  const auto vec3 = [](const std::vector<double>& v) {
    return Eigen::Vector3d(v[0], v[1], v[2]);
  };
  Trajectory trajectory;
  if (opt.trajectory == "constant")
    trajectory = Trajectory::constant(vec3(opt.velocity), opt.t_seg);
  else if (opt.trajectory == "quadratic")
    trajectory = Trajectory::make_quadratic(vec3(opt.velocity), vec3(opt.acceleration),
                                            opt.t_seg);
  else if (opt.trajectory == "sinusoidal")
    trajectory = Trajectory::make_sinusoidal(vec3(opt.amplitude), opt.omega, opt.phase,
                                             opt.t_seg);
  else
    throw CLI::ValidationError("--trajectory", "must be constant, quadratic or sinusoidal");

  ShapeKind shape;
  if (opt.shape == "ball")
    shape = ShapeKind::ball;
  else if (opt.shape == "disc")
    shape = ShapeKind::disc;
  else if (opt.shape == "cluster")
    shape = ShapeKind::cluster;
  else
    throw CLI::ValidationError("--shape", "must be ball, disc or cluster");

  const auto points = make_shape_template(shape, opt.points, opt.seed);
  SampleOptions sample_options;
  sample_options.endpoints = opt.exclusive_endpoints ? EndpointConvention::exclusive
                                                     : EndpointConvention::inclusive;
  PointCloudVideo video = sample_video(trajectory, points, opt.frames, sample_options);

  CorruptionSpec spec;
  spec.noise_sigma = opt.noise;
  spec.drop_fraction = opt.drop;
  if (!opt.occlude.empty()) {
    if (opt.occlude.size() != 4)
      throw CLI::ValidationError("--occlude", "expects nx ny nz offset");
    spec.occlusion_halfspace =
        Halfspace{Eigen::Vector3d(opt.occlude[0], opt.occlude[1], opt.occlude[2]),
                  opt.occlude[3]};
  }
  if (opt.density_axis >= 0)
    spec.density_gradient = DensityGradient{opt.density_axis, opt.density_strength};
  if (spec.noise_sigma > 0.0 || spec.drop_fraction > 0.0 || spec.occlusion_halfspace ||
      spec.density_gradient)
    video = corrupt(video, spec, opt.seed ^ 0xc0441ULL);

  write_video(video, opt.out, opt.binary ? VideoFormat::binary : VideoFormat::text);
  std::printf("wrote %d frames x %zu points to %s\n", video.frame_count(),
              video.frames.front().points.size(), opt.out.c_str());
  return 0;
}

struct UggcOptions {
  std::string in;
  std::string out;
  double radius = 0.3;
  std::vector<double> multipliers{0.5, 1.0, 3.0};
  std::string kernel = "gaussian_rbf";
  std::string features = "auto";
  int temporal_radius = 1;
  bool past_only = false;
  double gate_threshold = 4.6051701859880918;
  double gate_sharpness = 1.0;
  double epsilon_reg = 1e-6;
};

int run_uggc(const UggcOptions& opt) {
  const PointCloudVideo video = read_video(opt.in);
  validate(video);

  if (opt.features != "auto" && opt.features != "positions" &&
      opt.features != "embedded")
    throw CLI::ValidationError("--features", "must be auto, positions or embedded");
  FeatureSet features;
  if (opt.features == "positions" || (opt.features == "auto" && video.feature_dim == 0))
    features = FeatureSet::from_positions(video);
  else
    features = FeatureSet::from_video(video);

  KernelSpec kernel;
  kernel.base_radius = opt.radius;
  kernel.scale_multipliers = opt.multipliers;
  if (opt.kernel == "gaussian_rbf")
    kernel.kernel_form = KernelForm::gaussian_rbf;
  else if (opt.kernel == "inverse_multiquadric")
    kernel.kernel_form = KernelForm::inverse_multiquadric;
  else
    throw CLI::ValidationError("--kernel", "must be gaussian_rbf or inverse_multiquadric");

  GatingConfig gate{opt.gate_threshold, opt.gate_sharpness, opt.epsilon_reg};

  std::size_t per_frame = video.frames.front().points.size();
  for (const Frame& frame : video.frames)
    if (frame.points.size() != per_frame)
      throw std::domain_error(
          "uggc: TOK1 output needs a uniform point count per frame");

  const VideoIndex index(video);
  const auto outputs = uggc_forward_batch(
      index, features, kernel, opt.temporal_radius, gate,
      opt.past_only ? TemporalWindow::past_only : TemporalWindow::symmetric);

  TokenSequence tokens = TokenSequence::zeros(
      video.frame_count(), static_cast<int>(per_frame), features.dim());
  for (std::size_t i = 0; i < outputs.size(); ++i)
    std::copy(outputs[i].feature.begin(), outputs[i].feature.end(), tokens.token(static_cast<int>(i)));
  write_tokens(tokens, opt.out);
  std::printf("wrote %d x %d x %d tokens to %s\n", tokens.frames,
              tokens.tokens_per_frame, tokens.dim, opt.out.c_str());
  return 0;
}

struct AttnOptions {
  std::string in;
  std::string out;
  std::string config_path;
  int dim = 64;
  int heads = 4;
  double beta = 1.0;
  std::string phi = "linear";
  std::string fusion = "sum";
  int anchors = 64;
  int temporal_radius = 1;
  double radius = 0.3;
  double dt_ref = 0.0;  // 0 = use the video frame interval (s = 1)
  std::uint64_t seed = 42;
};

int run_attn(const AttnOptions& opt, const CLI::App* cmd) {
  const PointCloudVideo video = read_video(opt.in);
  validate(video);
  const FeatureSet features = video.feature_dim > 0
                                  ? FeatureSet::from_video(video)
                                  : FeatureSet::from_positions(video);

  // config file first, explicit flags override
  BlockConfig config;
  if (!opt.config_path.empty())
    config = parse_block_config(ConfigFile::load(opt.config_path));
  const auto given = [cmd](const char* flag) { return cmd->count(flag) > 0; };
  if (given("--radius")) config.kernel.base_radius = opt.radius;
  if (given("--dim")) config.attention.model_dim = opt.dim;
  if (given("--heads")) config.attention.head_count = opt.heads;
  if (opt.config_path.empty() || given("--heads") || given("--beta"))
    config.attention.beta.assign(
        static_cast<std::size_t>(config.attention.head_count), opt.beta);
  if (given("--phi")) {
    if (opt.phi == "linear")
      config.attention.phi.form = PhiForm::linear;
    else if (opt.phi == "logarithmic")
      config.attention.phi.form = PhiForm::logarithmic;
    else
      throw CLI::ValidationError("--phi", "must be linear or logarithmic");
  }
  if (given("--fusion")) {
    if (opt.fusion == "sum")
      config.attention.fusion_rule = FusionRule::sum;
    else if (opt.fusion == "concat_project")
      config.attention.fusion_rule = FusionRule::concat_project;
    else
      throw CLI::ValidationError("--fusion", "must be sum or concat_project");
  }
  if (given("--anchors")) config.anchors_per_frame = opt.anchors;
  if (given("--temporal-radius")) config.temporal_radius = opt.temporal_radius;
  if (given("--seed")) config.weight_seed = opt.seed;

  const double dt_ref = opt.dt_ref > 0.0 ? opt.dt_ref : video.frame_interval;
  const TemporalScale scale = scale_from_intervals(video.frame_interval, dt_ref);

  const TokenSequence tokens = gats_block_forward(video, features, config, scale);
  write_tokens(tokens, opt.out);
  std::printf("wrote %d x %d x %d tokens to %s (s = %.17g)\n", tokens.frames,
              tokens.tokens_per_frame, tokens.dim, opt.out.c_str(), scale.s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GATS operators for 4D point cloud videos"};
  app.require_subcommand(1);

  GenOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic point cloud video");
  gen_cmd->add_option("--trajectory", gen.trajectory, "constant|quadratic|sinusoidal");
  gen_cmd->add_option("--shape", gen.shape, "ball|disc|cluster");
  gen_cmd->add_option("--frames", gen.frames, "frame count")->check(CLI::Range(2, 1 << 20));
  gen_cmd->add_option("--points", gen.points, "points per frame");
  gen_cmd->add_option("--t-seg", gen.t_seg, "segment duration in seconds");
  gen_cmd->add_option("--seed", gen.seed, "random seed");
  gen_cmd->add_option("--velocity", gen.velocity, "vx vy vz")->expected(3);
  gen_cmd->add_option("--acceleration", gen.acceleration, "ax ay az")->expected(3);
  gen_cmd->add_option("--amplitude", gen.amplitude, "ax ay az")->expected(3);
  gen_cmd->add_option("--omega", gen.omega, "angular frequency (rad/s)");
  gen_cmd->add_option("--phase", gen.phase, "phase (rad)");
  gen_cmd->add_option("--noise", gen.noise, "additive Gaussian noise sigma");
  gen_cmd->add_option("--drop", gen.drop, "random drop fraction");
  gen_cmd->add_option("--occlude", gen.occlude, "halfspace nx ny nz offset")->expected(4);
  gen_cmd->add_option("--density-axis", gen.density_axis, "thinning axis 0|1|2");
  gen_cmd->add_option("--density-strength", gen.density_strength, "thinning strength");
  gen_cmd->add_flag("--binary", gen.binary, "write PCVB instead of PCV1");
  gen_cmd->add_flag("--exclusive-endpoints", gen.exclusive_endpoints,
                    "use dt = T_seg/F instead of T_seg/(F-1)");
  gen_cmd->add_option("--out", gen.out, "output path")->required();

  UggcOptions uggc;
  CLI::App* uggc_cmd =
      app.add_subcommand("uggc", "batch UGGC over a video, emit TOK1 tokens");
  uggc_cmd->add_option("--in", uggc.in, "input PCV1/PCVB path")->required();
  uggc_cmd->add_option("--out", uggc.out, "output TOK1 path")->required();
  uggc_cmd->add_option("--radius", uggc.radius, "base spatial radius");
  uggc_cmd->add_option("--multipliers", uggc.multipliers, "scale multipliers")
      ->expected(-1);
  uggc_cmd->add_option("--kernel", uggc.kernel, "gaussian_rbf|inverse_multiquadric");
  uggc_cmd->add_option("--features", uggc.features, "auto|positions|embedded");
  uggc_cmd->add_option("--temporal-radius", uggc.temporal_radius, "frame window radius");
  uggc_cmd->add_flag("--past-only", uggc.past_only, "past-only temporal window");
  uggc_cmd->add_option("--gate-threshold", uggc.gate_threshold, "gate log-cond midpoint");
  uggc_cmd->add_option("--gate-sharpness", uggc.gate_sharpness, "gate slope");
  uggc_cmd->add_option("--epsilon-reg", uggc.epsilon_reg, "covariance ridge fraction");

  AttnOptions attn;
  CLI::App* attn_cmd = app.add_subcommand("attn", "composed block forward, emit TOK1");
  attn_cmd->add_option("--in", attn.in, "input PCV1/PCVB path")->required();
  attn_cmd->add_option("--config", attn.config_path, "block config file");
  attn_cmd->add_option("--out", attn.out, "output TOK1 path")->required();
  attn_cmd->add_option("--dim", attn.dim, "model dimension");
  attn_cmd->add_option("--heads", attn.heads, "attention heads");
  attn_cmd->add_option("--beta", attn.beta, "temporal bias weight");
  attn_cmd->add_option("--phi", attn.phi, "linear|logarithmic");
  attn_cmd->add_option("--fusion", attn.fusion, "sum|concat_project");
  attn_cmd->add_option("--anchors", attn.anchors, "anchors per frame (0 = all)");
  attn_cmd->add_option("--temporal-radius", attn.temporal_radius, "UGGC frame radius");
  attn_cmd->add_option("--radius", attn.radius, "UGGC base spatial radius");
  attn_cmd->add_option("--dt-ref", attn.dt_ref, "reference interval (s); 0 = video dt");
  attn_cmd->add_option("--seed", attn.seed, "weight seed");

  std::string verify_kind;
  std::string verify_config;
  std::string verify_out;
  std::string verify_format = "json";
  CLI::App* verify_cmd = app.add_subcommand("verify", "run a verification suite");
  verify_cmd->add_option("kind", verify_kind, "invariance|robustness")->required();
  verify_cmd->add_option("--config", verify_config, "config file");
  verify_cmd->add_option("--out", verify_out, "report output path");
  verify_cmd->add_option("--format", verify_format, "json|csv|markdown");

  std::string grad_config;
  std::string grad_out;
  std::string grad_format = "json";
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  grad_cmd->add_option("--config", grad_config, "config file");
  grad_cmd->add_option("--out", grad_out, "report output path");
  grad_cmd->add_option("--format", grad_format, "json|csv|markdown");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return run_gen(gen);
    if (uggc_cmd->parsed()) return run_uggc(uggc);
    if (attn_cmd->parsed()) return run_attn(attn, attn_cmd);

    if (verify_cmd->parsed()) {
      ExperimentReport report;
      if (verify_kind == "invariance") {
        InvarianceConfig cfg;
        if (!verify_config.empty())
          cfg = parse_invariance_config(ConfigFile::load(verify_config));
        report = run_invariance_suite(cfg);
      } else if (verify_kind == "robustness") {
        RobustnessConfig cfg;
        if (!verify_config.empty())
          cfg = parse_robustness_config(ConfigFile::load(verify_config));
        report = run_robustness_suite(cfg);
      } else {
        std::fprintf(stderr, "verify: kind must be 'invariance' or 'robustness'\n");
        return 2;
      }
      print_checks(report);
      if (!verify_out.empty())
        emit_report(report, parse_format(verify_format), verify_out);
      return report.passed() ? 0 : 1;
    }

    if (grad_cmd->parsed()) {
      GradCheckConfig cfg;
      if (!grad_config.empty())
        cfg = parse_gradcheck_config(ConfigFile::load(grad_config));
      const ExperimentReport report = run_gradient_checks(cfg);
      print_checks(report);
      if (!grad_out.empty()) emit_report(report, parse_format(grad_format), grad_out);
      return report.passed() ? 0 : 1;
    }
  } catch (const std::exception& error) {
    std::fprintf(stderr, "error: %s\n", error.what());
    return 2;
  }
  return 0;
}
