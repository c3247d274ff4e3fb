#include "gats/attention.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "gats/rng.hpp"

namespace gats {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_finite(const TokenSequence& t, const char* name) {
  for (int i = 0; i < t.token_count(); ++i) {
    const double* row = t.token(i);
    for (int c = 0; c < t.dim; ++c)
      if (!std::isfinite(row[c]))
        throw std::domain_error(std::string("attention: non-finite value in ") + name +
                                " token (frame " + std::to_string(t.frame_of(i)) +
                                ", index " + std::to_string(i % t.tokens_per_frame) +
                                ")");
  }
}

// bias[h][dist] = beta_h * phi(s * dist)
std::vector<std::vector<double>> bias_tables(const AttentionSpec& spec,
                                             const TemporalScale& scale,
                                             int max_frames) {
  std::vector<std::vector<double>> tables(static_cast<std::size_t>(spec.head_count));
  for (int h = 0; h < spec.head_count; ++h) {
    std::vector<double>& table = tables[static_cast<std::size_t>(h)];
    table.resize(static_cast<std::size_t>(max_frames));
    for (int dist = 0; dist < max_frames; ++dist)
      table[static_cast<std::size_t>(dist)] =
          spec.beta_for_head(h) * temporal_bias(dist, scale, spec.phi);
  }
  return tables;
}

void check_shapes(const TokenSequence& q, const TokenSequence& k,
                  const TokenSequence& v, const AttentionSpec& spec) {
  spec.validate();
  if (q.dim != spec.model_dim || k.dim != spec.model_dim || v.dim != spec.model_dim)
    throw std::domain_error("attention: token dim does not match model_dim");
  if (k.frames != v.frames || k.tokens_per_frame != v.tokens_per_frame)
    throw std::domain_error("attention: key/value shapes differ");
  if (q.token_count() == 0 || k.token_count() == 0)
    throw std::domain_error("attention: empty token sequence");
}

}  // namespace

void AttentionSpec::validate() const {
  if (model_dim < 1 || head_count < 1)
    throw std::domain_error("AttentionSpec: dimensions must be positive");
  if (model_dim % head_count != 0)
    throw std::domain_error("AttentionSpec: head_count must divide model_dim");
  if (!beta.empty() && static_cast<int>(beta.size()) != head_count)
    throw std::domain_error("AttentionSpec: beta must have one entry per head");
}

TokenSequence attention_forward(const TokenSequence& q, const TokenSequence& k,
                                const TokenSequence& v, const AttentionSpec& spec,
                                const TemporalScale& scale) {
  check_shapes(q, k, v, spec);
  check_finite(q, "q");
  check_finite(k, "k");
  check_finite(v, "v");

  const int nq = q.token_count();
  const int nk = k.token_count();
  const int dh = spec.model_dim / spec.head_count;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto bias = bias_tables(spec, scale, std::max(q.frames, k.frames));

  TokenSequence out = TokenSequence::zeros(q.frames, q.tokens_per_frame, q.dim);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < nq; ++i) {
    std::vector<double> work(static_cast<std::size_t>(nk));
    const int fq = q.frame_of(i);
    const double* qrow = q.token(i);
    double* orow = out.token(i);
    for (int h = 0; h < spec.head_count; ++h) {
      const double* qh = qrow + h * dh;
      const std::vector<double>& bias_h = bias[static_cast<std::size_t>(h)];

      double max_logit = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < nk; ++j) {
        const double* kh = k.token(j) + h * dh;
        double dot = 0.0;
        for (int c = 0; c < dh; ++c) dot += qh[c] * kh[c];
        const double logit =
            dot * inv_sqrt +
            bias_h[static_cast<std::size_t>(std::abs(fq - k.frame_of(j)))];
        work[static_cast<std::size_t>(j)] = logit;
        max_logit = std::max(max_logit, logit);
      }

      double total = 0.0;
      for (int j = 0; j < nk; ++j) {
        const double e = std::exp(work[static_cast<std::size_t>(j)] - max_logit);
        work[static_cast<std::size_t>(j)] = e;
        total += e;
      }

      double* oh = orow + h * dh;
      for (int j = 0; j < nk; ++j) {
        const double w = work[static_cast<std::size_t>(j)] / total;
        const double* vh = v.token(j) + h * dh;
        for (int c = 0; c < dh; ++c) oh[c] += w * vh[c];
      }
    }
  }
  return out;
}

Eigen::MatrixXd attention_logits(const TokenSequence& q, const TokenSequence& k,
                                 const AttentionSpec& spec, const TemporalScale& scale,
                                 int head) {
  spec.validate();
  if (head < 0 || head >= spec.head_count)
    throw std::domain_error("attention_logits: head out of range");
  if (q.dim != spec.model_dim || k.dim != spec.model_dim)
    throw std::domain_error("attention_logits: token dim does not match model_dim");

  const int dh = spec.model_dim / spec.head_count;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto bias = bias_tables(spec, scale, std::max(q.frames, k.frames));

  Eigen::MatrixXd logits(q.token_count(), k.token_count());
  for (int i = 0; i < q.token_count(); ++i) {
    const double* qh = q.token(i) + head * dh;
    for (int j = 0; j < k.token_count(); ++j) {
      const double* kh = k.token(j) + head * dh;
      double dot = 0.0;
      for (int c = 0; c < dh; ++c) dot += qh[c] * kh[c];
      logits(i, j) =
          dot * inv_sqrt + bias[static_cast<std::size_t>(head)][static_cast<std::size_t>(
                               std::abs(q.frame_of(i) - k.frame_of(j)))];
    }
  }
  return logits;
}

TokenSequence attention_backward_q(const TokenSequence& q, const TokenSequence& k,
                                   const TokenSequence& v, const AttentionSpec& spec,
                                   const TemporalScale& scale,
                                   const TokenSequence& grad_output) {
  check_shapes(q, k, v, spec);
  if (grad_output.frames != q.frames ||
      grad_output.tokens_per_frame != q.tokens_per_frame || grad_output.dim != q.dim)
    throw std::domain_error("attention_backward_q: grad_output shape mismatch");

  const int nq = q.token_count();
  const int nk = k.token_count();
  const int dh = spec.model_dim / spec.head_count;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto bias = bias_tables(spec, scale, std::max(q.frames, k.frames));

  TokenSequence grad_q = TokenSequence::zeros(q.frames, q.tokens_per_frame, q.dim);

  std::vector<double> weights(static_cast<std::size_t>(nk));
  for (int i = 0; i < nq; ++i) {
    const int fq = q.frame_of(i);
    for (int h = 0; h < spec.head_count; ++h) {
      const double* qh = q.token(i) + h * dh;
      const double* gh = grad_output.token(i) + h * dh;

      double max_logit = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < nk; ++j) {
        const double* kh = k.token(j) + h * dh;
        double dot = 0.0;
        for (int c = 0; c < dh; ++c) dot += qh[c] * kh[c];
        weights[static_cast<std::size_t>(j)] =
            dot * inv_sqrt +
            bias[static_cast<std::size_t>(h)]
                [static_cast<std::size_t>(std::abs(fq - k.frame_of(j)))];
        max_logit = std::max(max_logit, weights[static_cast<std::size_t>(j)]);
      }
      double total = 0.0;
      for (int j = 0; j < nk; ++j) {
        const double e = std::exp(weights[static_cast<std::size_t>(j)] - max_logit);
        weights[static_cast<std::size_t>(j)] = e;
        total += e;
      }
      for (int j = 0; j < nk; ++j) weights[static_cast<std::size_t>(j)] /= total;

      // softmax backward: dlogit_j = w_j (g.v_j - sum_l w_l g.v_l)
      double expected = 0.0;
      for (int j = 0; j < nk; ++j) {
        const double* vh = v.token(j) + h * dh;
        double gv = 0.0;
        for (int c = 0; c < dh; ++c) gv += gh[c] * vh[c];
        expected += weights[static_cast<std::size_t>(j)] * gv;
      }
      double* out = grad_q.token(i) + h * dh;
      for (int j = 0; j < nk; ++j) {
        const double* vh = v.token(j) + h * dh;
        const double* kh = k.token(j) + h * dh;
        double gv = 0.0;
        for (int c = 0; c < dh; ++c) gv += gh[c] * vh[c];
        const double dlogit = weights[static_cast<std::size_t>(j)] * (gv - expected);
        for (int c = 0; c < dh; ++c) out[c] += dlogit * kh[c] * inv_sqrt;
      }
    }
  }
  return grad_q;
}

Eigen::MatrixXd seeded_projection(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal() * scale;
  return m;
}

TokenSequence fuse_keys(const TokenSequence& k_uggc, const TokenSequence& k_ts,
                        FusionRule rule, const Eigen::MatrixXd& projection) {
  if (k_uggc.frames != k_ts.frames ||
      k_uggc.tokens_per_frame != k_ts.tokens_per_frame || k_uggc.dim != k_ts.dim)
    throw std::domain_error("fuse_keys: shape mismatch");

  if (rule == FusionRule::sum) {
    TokenSequence out = k_uggc;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += k_ts.data[i];
    return out;
  }

  const int d = k_uggc.dim;
  Eigen::MatrixXd p = projection;
  if (p.size() == 0) p = seeded_projection(2 * d, d, 0);
  if (p.rows() != 2 * d || p.cols() != d)
    throw std::domain_error("fuse_keys: projection must be (2d x d)");

  TokenSequence out =
      TokenSequence::zeros(k_uggc.frames, k_uggc.tokens_per_frame, d);
  for (int i = 0; i < out.token_count(); ++i) {
    const double* a = k_uggc.token(i);
    const double* b = k_ts.token(i);
    double* o = out.token(i);
    for (int c = 0; c < d; ++c) {
      double acc = 0.0;
      for (int r = 0; r < d; ++r) acc += a[r] * p(r, c);
      for (int r = 0; r < d; ++r) acc += b[r] * p(d + r, c);
      o[c] = acc;
    }
  }
  return out;
}

namespace {

// Farthest point sampling from index 0; ties resolved toward the lowest
// index. Returns ascending point indices.
std::vector<int> select_anchors(const std::vector<Point4D>& points, int count) {
  const int n = static_cast<int>(points.size());
  std::vector<int> selected;
  if (count <= 0 || count >= n) {
    selected.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) selected[static_cast<std::size_t>(i)] = i;
    return selected;
  }
  std::vector<double> min_dist(static_cast<std::size_t>(n));
  selected.reserve(static_cast<std::size_t>(count));
  selected.push_back(0);
  for (int i = 0; i < n; ++i)
    min_dist[static_cast<std::size_t>(i)] =
        (points[static_cast<std::size_t>(i)].position - points[0].position)
            .squaredNorm();
  min_dist[0] = -1.0;
  while (static_cast<int>(selected.size()) < count) {
    int best = -1;
    double best_dist = -1.0;
    for (int i = 0; i < n; ++i)
      if (min_dist[static_cast<std::size_t>(i)] > best_dist) {
        best_dist = min_dist[static_cast<std::size_t>(i)];
        best = i;
      }
    selected.push_back(best);
    min_dist[static_cast<std::size_t>(best)] = -1.0;
    const Eigen::Vector3d& anchor = points[static_cast<std::size_t>(best)].position;
    for (int i = 0; i < n; ++i) {
      if (min_dist[static_cast<std::size_t>(i)] < 0.0) continue;
      const double d2 =
          (points[static_cast<std::size_t>(i)].position - anchor).squaredNorm();
      min_dist[static_cast<std::size_t>(i)] =
          std::min(min_dist[static_cast<std::size_t>(i)], d2);
    }
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

RowMatrix layer_norm_rows(const RowMatrix& x) {
  RowMatrix out(x.rows(), x.cols());
  const double inv_n = 1.0 / static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean *= inv_n;
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double d = x(r, c) - mean;
      var += d * d;
    }
    var *= inv_n;
    const double inv_std = 1.0 / std::sqrt(var + 1e-5);
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean) * inv_std;
  }
  return out;
}

RowMatrix draw_matrix(Rng& rng, int rows, int cols) {
  RowMatrix m(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal() * scale;
  return m;
}

TokenSequence wrap_tokens(RowMatrix m, int frames, int tokens_per_frame) {
  TokenSequence t;
  t.frames = frames;
  t.tokens_per_frame = tokens_per_frame;
  t.dim = static_cast<int>(m.cols());
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

}  // namespace

TokenSequence gats_block_forward(const PointCloudVideo& video,
                                 const FeatureSet& features, const BlockConfig& config,
                                 const TemporalScale& scale) {
  config.attention.validate();
  config.kernel.validate();
  if (config.kernel.scale_fusion != ScaleFusion::gated)
    throw std::domain_error("gats_block_forward: block requires gated scale fusion");
  if (video.frames.empty())
    throw std::domain_error("gats_block_forward: empty video");
  validate(video);

  const VideoIndex index(video);
  const int frame_count = video.frame_count();
  const int rt = config.rescale_temporal_radius
                     ? scaled_temporal_radius(config.temporal_radius, scale)
                     : config.temporal_radius;

  int tokens_per_frame = std::numeric_limits<int>::max();
  for (const Frame& f : video.frames)
    tokens_per_frame = std::min(tokens_per_frame, static_cast<int>(f.points.size()));
  if (config.anchors_per_frame > 0)
    tokens_per_frame = std::min(tokens_per_frame, config.anchors_per_frame);

  std::vector<std::vector<int>> anchors(static_cast<std::size_t>(frame_count));
  for (int t = 0; t < frame_count; ++t)
    anchors[static_cast<std::size_t>(t)] =
        select_anchors(video.frames[static_cast<std::size_t>(t)].points,
                       tokens_per_frame);

  const int d0 = features.dim();
  const int din = d0 + 3;
  const int d = config.attention.model_dim;
  const int hidden = config.ffn_hidden > 0 ? config.ffn_hidden : 2 * d;
  const int total = frame_count * tokens_per_frame;

  // Branch features per token: [input feature | normalized velocity] and the
  // gated UGGC aggregate.
  RowMatrix ts_feat(total, din);
  RowMatrix uggc_feat(total, d0);
  std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic, 8)
  for (int row = 0; row < total; ++row) {
    if (failure) continue;
    try {
      const int t = row / tokens_per_frame;
      const int a = row % tokens_per_frame;
      const int point =
          anchors[static_cast<std::size_t>(t)][static_cast<std::size_t>(a)];
      const Point4D& p = video.frames[static_cast<std::size_t>(t)]
                             .points[static_cast<std::size_t>(point)];

      const UGGCOutput o = uggc_forward(index, p, features, config.kernel, rt,
                                        config.gate);
      for (int c = 0; c < d0; ++c) uggc_feat(row, c) = o.feature[static_cast<std::size_t>(c)];

      const std::span<const double> f = features.at(t, point);
      for (int c = 0; c < d0; ++c) ts_feat(row, c) = f[static_cast<std::size_t>(c)];

      Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
      if (frame_count > 1) {
        if (t + 1 < frame_count) {
          const int j = index.nearest_in_frame(t + 1, p.position);
          velocity = relative_velocity(p.position,
                                       video.frames[static_cast<std::size_t>(t + 1)]
                                           .points[static_cast<std::size_t>(j)]
                                           .position,
                                       1, scale)
                         .normalized;
        } else {
          const int j = index.nearest_in_frame(t - 1, p.position);
          velocity = relative_velocity(video.frames[static_cast<std::size_t>(t - 1)]
                                           .points[static_cast<std::size_t>(j)]
                                           .position,
                                       p.position, 1, scale)
                         .normalized;
        }
      }
      for (int c = 0; c < 3; ++c) ts_feat(row, d0 + c) = velocity[c];
    } catch (const std::exception& error) {
      const auto wrapped = std::make_exception_ptr(std::domain_error(
          "gats_block_forward: token (frame " + std::to_string(row / tokens_per_frame) +
          ", anchor " + std::to_string(row % tokens_per_frame) + "): " + error.what()));
#pragma omp critical
      if (!failure) failure = wrapped;
    }
  }
  if (failure) std::rethrow_exception(failure);

  // Seeded weights, drawn in a fixed order: W_e, W_ku, W_kt, W_q, W_v, W_o,
  // W1, W2, then the key-fusion projection. Biases are zero.
  Rng rng(config.weight_seed);
  const RowMatrix w_embed = draw_matrix(rng, din, d);
  const RowMatrix w_key_uggc = draw_matrix(rng, d0, d);
  const RowMatrix w_key_ts = draw_matrix(rng, din, d);
  const RowMatrix w_query = draw_matrix(rng, d, d);
  const RowMatrix w_value = draw_matrix(rng, d, d);
  const RowMatrix w_out = draw_matrix(rng, d, d);
  const RowMatrix w_ffn1 = draw_matrix(rng, d, hidden);
  const RowMatrix w_ffn2 = draw_matrix(rng, hidden, d);
  Eigen::MatrixXd fusion_projection;
  if (config.attention.fusion_rule == FusionRule::concat_project) {
    const RowMatrix p = draw_matrix(rng, 2 * d, d);
    fusion_projection = p;
  }

  const RowMatrix embedded = ts_feat * w_embed;
  const RowMatrix embedded_norm = layer_norm_rows(embedded);
  const RowMatrix queries = embedded_norm * w_query;
  const RowMatrix values = embedded_norm * w_value;
  const RowMatrix keys_uggc = uggc_feat * w_key_uggc;
  const RowMatrix keys_ts = ts_feat * w_key_ts;

  const TokenSequence k = fuse_keys(wrap_tokens(keys_uggc, frame_count, tokens_per_frame),
                                    wrap_tokens(keys_ts, frame_count, tokens_per_frame),
                                    config.attention.fusion_rule, fusion_projection);
  const TokenSequence attended = attention_forward(
      wrap_tokens(queries, frame_count, tokens_per_frame), k,
      wrap_tokens(values, frame_count, tokens_per_frame), config.attention, scale);

  const Eigen::Map<const RowMatrix> attended_m(attended.data.data(), total, d);
  RowMatrix x = embedded + attended_m * w_out;

  const RowMatrix x_norm = layer_norm_rows(x);
  RowMatrix hidden_act = x_norm * w_ffn1;
  for (Eigen::Index i = 0; i < hidden_act.size(); ++i)
    hidden_act.data()[i] = std::max(0.0, hidden_act.data()[i]);
  x += hidden_act * w_ffn2;

  return wrap_tokens(x, frame_count, tokens_per_frame);
}

// ---------------------------------------------------------------------------
// TOK1 I/O
// ---------------------------------------------------------------------------

std::string tokens_to_string(const TokenSequence& tokens) {
  std::string out = "TOK1 " + std::to_string(tokens.frames) + " " +
                    std::to_string(tokens.tokens_per_frame) + " " +
                    std::to_string(tokens.dim) + "\n";
  char buf[40];
  for (int i = 0; i < tokens.token_count(); ++i) {
    const double* row = tokens.token(i);
    for (int c = 0; c < tokens.dim; ++c) {
      if (c) out += ' ';
      const int n = std::snprintf(buf, sizeof(buf), "%.17g", row[c]);
      out.append(buf, static_cast<std::size_t>(n));
    }
    out += '\n';
  }
  return out;
}

void write_tokens(const TokenSequence& tokens, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const std::string text = tokens_to_string(tokens);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

TokenSequence read_tokens(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'", 0);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  std::istringstream stream(content);
  std::string magic;
  int m = 0, n = 0, d = 0;
  if (!(stream >> magic >> m >> n >> d) || magic != "TOK1" || m < 0 || n < 0 || d < 0)
    throw ParseError("malformed TOK1 header", 0);
  TokenSequence tokens = TokenSequence::zeros(m, n, d);
  for (std::size_t i = 0; i < tokens.data.size(); ++i)
    if (!(stream >> tokens.data[i]))
      throw ParseError("truncated TOK1 payload",
                       static_cast<std::int64_t>(stream.tellg()));
  double extra;
  if (stream >> extra) throw ParseError("trailing content in TOK1 file", 0);
  return tokens;
}

}  // namespace gats
