#include "gats/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gats {

bool evaluate_check(const CheckRecord& check) {
  if (check.comparator == "lt") return check.value < check.tolerance;
  if (check.comparator == "le") return check.value <= check.tolerance;
  if (check.comparator == "ge") return check.value >= check.tolerance;
  if (check.comparator == "in_range")
    return check.value >= check.tolerance && check.value <= check.tolerance_hi;
  if (check.comparator == "report") return true;
  throw std::domain_error("unknown comparator '" + check.comparator + "'");
}

CheckRecord make_check(std::string name, double value, std::string comparator,
                       double tolerance, double tolerance_hi, bool informational) {
  CheckRecord check;
  check.name = std::move(name);
  check.value = value;
  check.comparator = std::move(comparator);
  check.tolerance = tolerance;
  check.tolerance_hi = tolerance_hi;
  check.informational = informational;
  check.pass = evaluate_check(check);
  return check;
}

bool ExperimentReport::passed() const {
  for (const CheckRecord& check : checks)
    if (!check.informational && !check.pass) return false;
  return true;
}

namespace {

using nlohmann::json;

json check_to_json(const CheckRecord& check) {
  json j;
  j["name"] = check.name;
  j["value"] = check.value;
  j["comparator"] = check.comparator;
  j["tolerance"] = check.tolerance;
  if (check.comparator == "in_range") j["tolerance_hi"] = check.tolerance_hi;
  j["informational"] = check.informational;
  j["pass"] = check.pass;
  return j;
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string render_report(const ExperimentReport& report, ReportFormat format) {
  if (format == ReportFormat::json) {
    json j;
    j["experiment"] = report.experiment;
    j["parameters"] = json::object();
    for (const auto& [key, value] : report.parameters) j["parameters"][key] = value;
    j["trials"] = json::array();
    for (const TrialRecord& trial : report.trials) {
      json t;
      t["name"] = trial.name;
      t["metrics"] = json::object();
      for (const auto& [key, value] : trial.metrics) t["metrics"][key] = value;
      j["trials"].push_back(std::move(t));
    }
    j["checks"] = json::array();
    for (const CheckRecord& check : report.checks)
      j["checks"].push_back(check_to_json(check));
    j["passed"] = report.passed();
    return j.dump(2) + "\n";
  }

  if (format == ReportFormat::csv) {
    std::set<std::string> columns;
    for (const TrialRecord& trial : report.trials)
      for (const auto& [key, value] : trial.metrics) columns.insert(key);
    std::string out = "trial";
    for (const std::string& col : columns) out += "," + col;
    out += "\n";
    for (const TrialRecord& trial : report.trials) {
      out += trial.name;
      for (const std::string& col : columns) {
        out += ",";
        const auto it = trial.metrics.find(col);
        if (it != trial.metrics.end()) out += format_value(it->second);
      }
      out += "\n";
    }
    return out;
  }

  // markdown
  std::string out = "# " + report.experiment + "\n\n";
  if (!report.parameters.empty()) {
    out += "| parameter | value |\n|---|---|\n";
    for (const auto& [key, value] : report.parameters)
      out += "| " + key + " | " + value + " |\n";
    out += "\n";
  }
  out += "| check | value | criterion | result |\n|---|---|---|---|\n";
  for (const CheckRecord& check : report.checks) {
    std::string criterion;
    if (check.comparator == "in_range")
      criterion = "in [" + format_value(check.tolerance) + ", " +
                  format_value(check.tolerance_hi) + "]";
    else if (check.comparator == "report")
      criterion = "reported";
    else
      criterion = check.comparator + " " + format_value(check.tolerance);
    out += "| " + check.name + " | " + format_value(check.value) + " | " + criterion +
           " | " +
           (check.informational ? std::string("info")
                                : std::string(check.pass ? "pass" : "FAIL")) +
           " |\n";
  }
  if (!report.trials.empty()) {
    out += "\n";
    std::set<std::string> columns;
    for (const TrialRecord& trial : report.trials)
      for (const auto& [key, value] : trial.metrics) columns.insert(key);
    out += "| trial |";
    for (const std::string& col : columns) out += " " + col + " |";
    out += "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) out += "---|";
    out += "\n";
    for (const TrialRecord& trial : report.trials) {
      out += "| " + trial.name + " |";
      for (const std::string& col : columns) {
        const auto it = trial.metrics.find(col);
        out += " " + (it != trial.metrics.end() ? format_value(it->second)
                                                : std::string("")) +
               " |";
      }
      out += "\n";
    }
  }
  out += "\n" + std::string(report.passed() ? "PASSED" : "FAILED") + "\n";
  return out;
}

void emit_report(const ExperimentReport& report, ReportFormat format,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const std::string text = render_report(report, format);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

ExperimentReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  ExperimentReport report;
  report.experiment = j.at("experiment").get<std::string>();
  for (const auto& [key, value] : j.at("parameters").items())
    report.parameters[key] = value.get<std::string>();
  for (const json& t : j.at("trials")) {
    TrialRecord trial;
    trial.name = t.at("name").get<std::string>();
    for (const auto& [key, value] : t.at("metrics").items())
      trial.metrics[key] = value.get<double>();
    report.trials.push_back(std::move(trial));
  }
  for (const json& c : j.at("checks")) {
    CheckRecord check;
    check.name = c.at("name").get<std::string>();
    check.value = c.at("value").get<double>();
    check.comparator = c.at("comparator").get<std::string>();
    check.tolerance = c.at("tolerance").get<double>();
    if (c.contains("tolerance_hi")) check.tolerance_hi = c.at("tolerance_hi").get<double>();
    check.informational = c.at("informational").get<bool>();
    check.pass = c.at("pass").get<bool>();
    report.checks.push_back(std::move(check));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile file;
  file.origin_ = origin;
  std::string section;
  int line_number = 0;
  std::istringstream stream(text);
  std::string line;
  while (std::getline(stream, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t");
    std::string trimmed = line.substr(first, last - first + 1);
    if (trimmed[0] == '#' || trimmed[0] == ';') continue;
    if (trimmed.front() == '[') {
      if (trimmed.back() != ']' || trimmed.size() < 3)
        throw std::runtime_error(origin + ":" + std::to_string(line_number) +
                                 ": malformed section header");
      section = trimmed.substr(1, trimmed.size() - 2);
      continue;
    }
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(line_number) +
                               ": expected 'key = value'");
    std::string key = trimmed.substr(0, eq);
    std::string value = trimmed.substr(eq + 1);
    const auto key_end = key.find_last_not_of(" \t");
    key = key_end == std::string::npos ? "" : key.substr(0, key_end + 1);
    const auto value_start = value.find_first_not_of(" \t");
    value = value_start == std::string::npos ? "" : value.substr(value_start);
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(line_number) +
                               ": empty key");
    file.sections_[section][key] = Entry{value, line_number};
  }
  return file;
}

const ConfigFile::Entry* ConfigFile::find(const std::string& section,
                                          const std::string& key) const {
  const auto sit = sections_.find(section);
  if (sit == sections_.end()) return nullptr;
  const auto kit = sit->second.find(key);
  return kit == sit->second.end() ? nullptr : &kit->second;
}

void ConfigFile::fail(const Entry& entry, const std::string& message) const {
  throw std::runtime_error(origin_ + ":" + std::to_string(entry.line) + ": " + message);
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
  const Entry* entry = find(section, key);
  return entry ? entry->value : fallback;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  const Entry* entry = find(section, key);
  if (!entry) return fallback;
  double value = 0.0;
  const char* begin = entry->value.data();
  const char* end = begin + entry->value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    fail(*entry, "cannot parse '" + entry->value + "' as a number");
  return value;
}

int ConfigFile::get_int(const std::string& section, const std::string& key,
                        int fallback) const {
  const Entry* entry = find(section, key);
  if (!entry) return fallback;
  int value = 0;
  const char* begin = entry->value.data();
  const char* end = begin + entry->value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    fail(*entry, "cannot parse '" + entry->value + "' as an integer");
  return value;
}

std::uint64_t ConfigFile::get_uint(const std::string& section, const std::string& key,
                                   std::uint64_t fallback) const {
  const Entry* entry = find(section, key);
  if (!entry) return fallback;
  std::uint64_t value = 0;
  const char* begin = entry->value.data();
  const char* end = begin + entry->value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    fail(*entry, "cannot parse '" + entry->value + "' as an unsigned integer");
  return value;
}

namespace {

std::vector<std::string> split_ws(const std::string& value) {
  std::vector<std::string> out;
  std::istringstream stream(value);
  std::string token;
  while (stream >> token) out.push_back(token);
  return out;
}

}  // namespace

Eigen::Vector3d ConfigFile::get_vector3(const std::string& section,
                                        const std::string& key,
                                        const Eigen::Vector3d& fallback) const {
  const Entry* entry = find(section, key);
  if (!entry) return fallback;
  const auto tokens = split_ws(entry->value);
  if (tokens.size() != 3) fail(*entry, "expected three numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    const std::string& tok = tokens[static_cast<std::size_t>(i)];
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v[i]);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
      fail(*entry, "cannot parse '" + tok + "' as a number");
  }
  return v;
}

std::vector<int> ConfigFile::get_int_list(const std::string& section,
                                          const std::string& key,
                                          const std::vector<int>& fallback) const {
  const Entry* entry = find(section, key);
  if (!entry) return fallback;
  std::vector<int> out;
  for (const std::string& tok : split_ws(entry->value)) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
      fail(*entry, "cannot parse '" + tok + "' as an integer");
    out.push_back(v);
  }
  if (out.empty()) fail(*entry, "expected at least one integer");
  return out;
}

std::vector<double> ConfigFile::get_double_list(
    const std::string& section, const std::string& key,
    const std::vector<double>& fallback) const {
  const Entry* entry = find(section, key);
  if (!entry) return fallback;
  std::vector<double> out;
  for (const std::string& tok : split_ws(entry->value)) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
      fail(*entry, "cannot parse '" + tok + "' as a number");
    out.push_back(v);
  }
  if (out.empty()) fail(*entry, "expected at least one number");
  return out;
}

InvarianceConfig parse_invariance_config(const ConfigFile& file) {
  InvarianceConfig cfg;
  const std::string s = "invariance";
  cfg.t_seg = file.get_double(s, "t_seg", cfg.t_seg);
  cfg.dt_ref = file.get_double(s, "dt_ref", cfg.dt_ref);
  cfg.frame_counts = file.get_int_list(s, "frame_counts", cfg.frame_counts);
  cfg.linear_velocity = file.get_vector3(s, "linear_velocity", cfg.linear_velocity);
  cfg.quad_velocity = file.get_vector3(s, "quad_velocity", cfg.quad_velocity);
  cfg.quad_acceleration =
      file.get_vector3(s, "quad_acceleration", cfg.quad_acceleration);
  cfg.sin_amplitude = file.get_vector3(s, "sin_amplitude", cfg.sin_amplitude);
  cfg.sin_omega = file.get_double(s, "sin_omega", cfg.sin_omega);
  cfg.sin_phase = file.get_double(s, "sin_phase", cfg.sin_phase);
  cfg.dt_exponent_lo = file.get_int(s, "dt_exponent_lo", cfg.dt_exponent_lo);
  cfg.dt_exponent_hi = file.get_int(s, "dt_exponent_hi", cfg.dt_exponent_hi);
  cfg.bias_coarse_frames = file.get_int(s, "bias_coarse_frames", cfg.bias_coarse_frames);
  cfg.bias_token_dim = file.get_int(s, "bias_token_dim", cfg.bias_token_dim);
  cfg.template_points = file.get_int(s, "template_points", cfg.template_points);
  cfg.temporal_radius = file.get_int(s, "temporal_radius", cfg.temporal_radius);
  cfg.seed = file.get_uint(s, "seed", cfg.seed);
  const std::string endpoints = file.get_string(s, "endpoints", "inclusive");
  if (endpoints == "inclusive")
    cfg.endpoints = EndpointConvention::inclusive;
  else if (endpoints == "exclusive")
    cfg.endpoints = EndpointConvention::exclusive;
  else
    throw std::runtime_error("endpoints must be 'inclusive' or 'exclusive'");
  const std::string convention = file.get_string(s, "scale_convention", "dt_over_ref");
  if (convention == "dt_over_ref")
    cfg.convention = ScaleConvention::dt_over_ref;
  else if (convention == "ref_over_dt")
    cfg.convention = ScaleConvention::ref_over_dt;
  else
    throw std::runtime_error("scale_convention must be 'dt_over_ref' or 'ref_over_dt'");
  const std::string phi_form = file.get_string(s, "phi", "linear");
  if (phi_form == "linear")
    cfg.phi.form = PhiForm::linear;
  else if (phi_form == "logarithmic")
    cfg.phi.form = PhiForm::logarithmic;
  else
    throw std::runtime_error("phi must be 'linear' or 'logarithmic'");
  cfg.scaling_law_max_frames =
      file.get_int(s, "scaling_law_max_frames", cfg.scaling_law_max_frames);
  cfg.tol_velocity = file.get_double(s, "tol_velocity", cfg.tol_velocity);
  cfg.tol_quad_rel = file.get_double(s, "tol_quad_rel", cfg.tol_quad_rel);
  cfg.slope_lo = file.get_double(s, "slope_lo", cfg.slope_lo);
  cfg.slope_hi = file.get_double(s, "slope_hi", cfg.slope_hi);
  cfg.tol_bias = file.get_double(s, "tol_bias", cfg.tol_bias);
  cfg.tol_scaling_law = file.get_double(s, "tol_scaling_law", cfg.tol_scaling_law);
  return cfg;
}

namespace {

KernelSpec parse_kernel_section(const ConfigFile& file, const KernelSpec& defaults) {
  KernelSpec kernel = defaults;
  kernel.base_radius = file.get_double("kernel", "base_radius", kernel.base_radius);
  kernel.scale_multipliers =
      file.get_double_list("kernel", "scale_multipliers", kernel.scale_multipliers);
  const std::string form = file.get_string("kernel", "form", "gaussian_rbf");
  if (form == "gaussian_rbf")
    kernel.kernel_form = KernelForm::gaussian_rbf;
  else if (form == "inverse_multiquadric")
    kernel.kernel_form = KernelForm::inverse_multiquadric;
  else
    throw std::runtime_error(
        "kernel form must be 'gaussian_rbf' or 'inverse_multiquadric'");
  return kernel;
}

GatingConfig parse_gate_section(const ConfigFile& file, const GatingConfig& defaults) {
  GatingConfig gate = defaults;
  gate.threshold = file.get_double("gate", "threshold", gate.threshold);
  gate.sharpness = file.get_double("gate", "sharpness", gate.sharpness);
  gate.epsilon_reg = file.get_double("gate", "epsilon_reg", gate.epsilon_reg);
  return gate;
}

}  // namespace

RobustnessConfig parse_robustness_config(const ConfigFile& file) {
  RobustnessConfig cfg;
  const std::string s = "robustness";
  cfg.trials = file.get_int(s, "trials", cfg.trials);
  cfg.frames = file.get_int(s, "frames", cfg.frames);
  cfg.points_per_frame = file.get_int(s, "points_per_frame", cfg.points_per_frame);
  cfg.noise_sigma = file.get_double(s, "noise_sigma", cfg.noise_sigma);
  cfg.occlusion_fraction =
      file.get_double(s, "occlusion_fraction", cfg.occlusion_fraction);
  cfg.drift_noise_sigma = file.get_double(s, "drift_noise_sigma", cfg.drift_noise_sigma);
  cfg.drift_center_stride =
      file.get_int(s, "drift_center_stride", cfg.drift_center_stride);
  cfg.temporal_radius = file.get_int(s, "temporal_radius", cfg.temporal_radius);
  cfg.t_seg = file.get_double(s, "t_seg", cfg.t_seg);
  cfg.seed = file.get_uint(s, "seed", cfg.seed);
  cfg.sign_test_p = file.get_double(s, "sign_test_p", cfg.sign_test_p);
  cfg.kernel = parse_kernel_section(file, cfg.kernel);
  cfg.gate = parse_gate_section(file, cfg.gate);
  return cfg;
}

BlockConfig parse_block_config(const ConfigFile& file) {
  BlockConfig cfg;
  cfg.kernel = parse_kernel_section(file, cfg.kernel);
  cfg.gate = parse_gate_section(file, cfg.gate);
  const std::string a = "attention";
  cfg.attention.model_dim = file.get_int(a, "model_dim", cfg.attention.model_dim);
  cfg.attention.head_count = file.get_int(a, "head_count", cfg.attention.head_count);
  cfg.attention.beta = file.get_double_list(a, "beta", cfg.attention.beta);
  const std::string phi_form = file.get_string(a, "phi", "linear");
  if (phi_form == "linear")
    cfg.attention.phi.form = PhiForm::linear;
  else if (phi_form == "logarithmic")
    cfg.attention.phi.form = PhiForm::logarithmic;
  else
    throw std::runtime_error("phi must be 'linear' or 'logarithmic'");
  const std::string fusion = file.get_string(a, "fusion_rule", "sum");
  if (fusion == "sum")
    cfg.attention.fusion_rule = FusionRule::sum;
  else if (fusion == "concat_project")
    cfg.attention.fusion_rule = FusionRule::concat_project;
  else
    throw std::runtime_error("fusion_rule must be 'sum' or 'concat_project'");
  const std::string b = "block";
  cfg.temporal_radius = file.get_int(b, "temporal_radius", cfg.temporal_radius);
  cfg.rescale_temporal_radius = file.get_int(b, "rescale_temporal_radius",
                                             cfg.rescale_temporal_radius ? 1 : 0) != 0;
  cfg.anchors_per_frame = file.get_int(b, "anchors_per_frame", cfg.anchors_per_frame);
  cfg.ffn_hidden = file.get_int(b, "ffn_hidden", cfg.ffn_hidden);
  cfg.weight_seed = file.get_uint(b, "weight_seed", cfg.weight_seed);
  return cfg;
}

GradCheckConfig parse_gradcheck_config(const ConfigFile& file) {
  GradCheckConfig cfg;
  const std::string s = "gradcheck";
  cfg.trials = file.get_int(s, "trials", cfg.trials);
  cfg.seed = file.get_uint(s, "seed", cfg.seed);
  cfg.fd_step = file.get_double(s, "fd_step", cfg.fd_step);
  cfg.tolerance = file.get_double(s, "tolerance", cfg.tolerance);
  return cfg;
}

}  // namespace gats
