#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gats/gaussian.hpp"
#include "gats/pcvideo.hpp"
#include "gats/temporal.hpp"
#include "gats/uggc.hpp"

namespace gats {

// A dense M x N x d block of token features: M frames, N tokens per frame.
// Token i lives in frame i / N, so the frame map is total by construction.
struct TokenSequence {
  int frames = 0;
  int tokens_per_frame = 0;
  int dim = 0;
  std::vector<double> data;  // row-major (frame, token, channel)

  static TokenSequence zeros(int m, int n, int d) {
    TokenSequence t;
    t.frames = m;
    t.tokens_per_frame = n;
    t.dim = d;
    t.data.assign(static_cast<std::size_t>(m) * static_cast<std::size_t>(n) *
                      static_cast<std::size_t>(d),
                  0.0);
    return t;
  }

  int token_count() const { return frames * tokens_per_frame; }
  int frame_of(int token) const { return token / tokens_per_frame; }

  double* token(int i) {
    return data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(dim);
  }
  const double* token(int i) const {
    return data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(dim);
  }

  double& at(int m, int n, int c) {
    return data[(static_cast<std::size_t>(m) * static_cast<std::size_t>(tokens_per_frame) +
                 static_cast<std::size_t>(n)) *
                    static_cast<std::size_t>(dim) +
                static_cast<std::size_t>(c)];
  }
  double at(int m, int n, int c) const {
    return data[(static_cast<std::size_t>(m) * static_cast<std::size_t>(tokens_per_frame) +
                 static_cast<std::size_t>(n)) *
                    static_cast<std::size_t>(dim) +
                static_cast<std::size_t>(c)];
  }
};

enum class FusionRule { sum, concat_project };

struct AttentionSpec {
  int model_dim = 64;
  int head_count = 4;
  std::vector<double> beta;  // per-head bias weight; empty means all 1.0
  PhiSpec phi;
  FusionRule fusion_rule = FusionRule::sum;

  double beta_for_head(int h) const {
    return beta.empty() ? 1.0 : beta[static_cast<std::size_t>(h)];
  }
  void validate() const;
};

// Multi-head scaled dot-product attention with the additive temporal bias
// beta_h * phi(s * |frame(q) - frame(k)|). Heads are contiguous slices of
// the feature dimension; softmax and the value reduction run in fixed key
// order, so results do not depend on the parallel schedule.
TokenSequence attention_forward(const TokenSequence& q, const TokenSequence& k,
                                const TokenSequence& v, const AttentionSpec& spec,
                                const TemporalScale& scale);

// Pre-softmax logit matrix (queries x keys) of one head; diagnostic surface.
Eigen::MatrixXd attention_logits(const TokenSequence& q, const TokenSequence& k,
                                 const AttentionSpec& spec, const TemporalScale& scale,
                                 int head);

// Gradient of <grad_output, attention_forward(q,k,v)> with respect to q.
TokenSequence attention_backward_q(const TokenSequence& q, const TokenSequence& k,
                                   const TokenSequence& v, const AttentionSpec& spec,
                                   const TemporalScale& scale,
                                   const TokenSequence& grad_output);

// Deterministic Gaussian matrix (entries N(0, 1/rows), row-major fill order)
// for seeded projections.
Eigen::MatrixXd seeded_projection(int rows, int cols, std::uint64_t seed);

// sum: elementwise addition. concat_project: per token, the concatenated
// 2d-vector [a; b] is multiplied by a (2d x d) projection. An empty
// projection selects the seeded default (seed 0).
TokenSequence fuse_keys(const TokenSequence& k_uggc, const TokenSequence& k_ts,
                        FusionRule rule,
                        const Eigen::MatrixXd& projection = Eigen::MatrixXd());

// Configuration of the composed block. All internal weights are drawn from
// one generator seeded with weight_seed, in a fixed documented order, so the
// forward pass is reproducible bit for bit.
struct BlockConfig {
  KernelSpec kernel;
  GatingConfig gate;
  AttentionSpec attention;
  int temporal_radius = 1;        // window of 3 frames
  bool rescale_temporal_radius = true;  // apply r_t' = s * r_t
  int anchors_per_frame = 64;     // 0 = every point is a token
  int ffn_hidden = 0;             // 0 = 2 * model_dim
  std::uint64_t weight_seed = 42;
};

// One forward pass of the composed block:
//   1. anchors selected per frame (farthest point sampling from index 0)
//   2. UGGC branch: gated Gaussian aggregation at every anchor
//   3. TS branch: nearest-neighbor frame-to-frame velocity, normalized by s,
//      appended to the anchor features
//   4. keys fused from the two branches, attention with the temporal bias
//   5. residual + feed-forward with layer normalization (pre-norm)
// Output is an M x N x model_dim token block over the anchors.
TokenSequence gats_block_forward(const PointCloudVideo& video,
                                 const FeatureSet& features, const BlockConfig& config,
                                 const TemporalScale& scale);

// Text token format "TOK1": header `TOK1 <M> <N> <d>`, then one token per
// line as 17-significant-digit decimals. write -> read is the identity.
void write_tokens(const TokenSequence& tokens, const std::filesystem::path& path);
TokenSequence read_tokens(const std::filesystem::path& path);
std::string tokens_to_string(const TokenSequence& tokens);

}  // namespace gats
