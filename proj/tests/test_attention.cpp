#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gats/attention.hpp"
#include "gats/harness.hpp"
#include "gats/rng.hpp"
#include "oracles.hpp"

using namespace gats;

namespace {

TokenSequence random_tokens(int frames, int per_frame, int dim, Rng& rng) {
  TokenSequence t = TokenSequence::zeros(frames, per_frame, dim);
  for (double& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("attention spec validation") {
  AttentionSpec spec;
  spec.model_dim = 10;
  spec.head_count = 4;
  CHECK_THROWS_AS(spec.validate(), std::domain_error);
  spec.model_dim = 8;
  CHECK_NOTHROW(spec.validate());
  spec.beta = {1.0};
  CHECK_THROWS_AS(spec.validate(), std::domain_error);
  spec.beta = {1.0, 0.5, 2.0, 1.5};
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("bias off reduces to plain scaled dot-product attention") {
  Rng rng(41);
  AttentionSpec spec;
  spec.model_dim = 8;
  spec.head_count = 2;
  spec.beta = {0.0, 0.0};
  const TemporalScale scale = explicit_scale(1.7);

  const TokenSequence q = random_tokens(3, 2, 8, rng);
  const TokenSequence k = random_tokens(3, 2, 8, rng);
  const TokenSequence v = random_tokens(3, 2, 8, rng);
  const TokenSequence out = attention_forward(q, k, v, spec, scale);
  // oracle with the bias term absent entirely (s = 0 kills phi entirely for
  // the linear form; beta zero besides)
  const TokenSequence expected =
      oracles::attention_oracle(q, k, v, 2, {0.0, 0.0}, 0.0, false);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    CHECK(oracles::rel_err(out.data[i], expected.data[i]) < 1e-10);
}

TEST_CASE("a single key takes the full softmax mass") {
  Rng rng(42);
  AttentionSpec spec;
  spec.model_dim = 4;
  spec.head_count = 1;
  const TokenSequence q = random_tokens(2, 3, 4, rng);
  const TokenSequence k = random_tokens(1, 1, 4, rng);
  const TokenSequence v = random_tokens(1, 1, 4, rng);
  const TokenSequence out = attention_forward(q, k, v, spec, explicit_scale(2.0));
  for (int i = 0; i < out.token_count(); ++i)
    for (int c = 0; c < 4; ++c) CHECK(out.token(i)[c] == v.token(0)[c]);
}

TEST_CASE("attention matches the explicit-loop oracle") {
  Rng rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    AttentionSpec spec;
    spec.model_dim = 4;
    spec.head_count = trial % 2 == 0 ? 1 : 2;
    spec.beta.assign(static_cast<std::size_t>(spec.head_count), 0.5 + rng.uniform());
    if (trial % 3 == 0) spec.phi.form = PhiForm::logarithmic;
    const TemporalScale scale = explicit_scale(0.25 + rng.uniform());

    const TokenSequence q = random_tokens(2, 2, 4, rng);
    const TokenSequence k = random_tokens(2, 2, 4, rng);
    const TokenSequence v = random_tokens(2, 2, 4, rng);

    const TokenSequence out = attention_forward(q, k, v, spec, scale);
    const TokenSequence expected = oracles::attention_oracle(
        q, k, v, spec.head_count, spec.beta, scale.s,
        spec.phi.form == PhiForm::logarithmic);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      CHECK(oracles::rel_err(out.data[i], expected.data[i]) < 1e-10);
  }
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(44);
  AttentionSpec spec;
  spec.model_dim = 6;
  spec.head_count = 3;
  const TemporalScale scale = explicit_scale(0.5);
  const TokenSequence q = random_tokens(2, 4, 6, rng);
  const TokenSequence k = random_tokens(3, 4, 6, rng);
  // ones as values: the head output equals the row weight sum
  TokenSequence ones = TokenSequence::zeros(3, 4, 6);
  for (double& v : ones.data) v = 1.0;
  const TokenSequence out = attention_forward(q, k, ones, spec, scale);
  for (double v : out.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("permuting query tokens within a frame permutes output rows") {
  Rng rng(45);
  AttentionSpec spec;
  spec.model_dim = 8;
  spec.head_count = 2;
  const TemporalScale scale = explicit_scale(1.0);
  const TokenSequence q = random_tokens(3, 4, 8, rng);
  const TokenSequence k = random_tokens(3, 4, 8, rng);
  const TokenSequence v = random_tokens(3, 4, 8, rng);
  const TokenSequence base = attention_forward(q, k, v, spec, scale);

  // swap tokens 1 and 3 of frame 2
  TokenSequence permuted = q;
  for (int c = 0; c < 8; ++c)
    std::swap(permuted.at(2, 1, c), permuted.at(2, 3, c));
  const TokenSequence out = attention_forward(permuted, k, v, spec, scale);
  for (int c = 0; c < 8; ++c) {
    CHECK(out.at(2, 1, c) == base.at(2, 3, c));
    CHECK(out.at(2, 3, c) == base.at(2, 1, c));
    CHECK(out.at(2, 0, c) == base.at(2, 0, c));
  }
}

TEST_CASE("shape mismatches are rejected") {
  Rng rng(56);
  AttentionSpec spec;
  spec.model_dim = 8;
  spec.head_count = 2;
  const TokenSequence q = random_tokens(2, 2, 8, rng);
  const TokenSequence narrow = random_tokens(2, 2, 4, rng);
  CHECK_THROWS_AS(attention_forward(q, narrow, q, spec, explicit_scale(1.0)),
                  std::domain_error);
  const TokenSequence short_v = random_tokens(1, 2, 8, rng);
  CHECK_THROWS_AS(attention_forward(q, q, short_v, spec, explicit_scale(1.0)),
                  std::domain_error);
}

TEST_CASE("non-finite tokens are rejected with identification") {
  Rng rng(46);
  AttentionSpec spec;
  spec.model_dim = 4;
  spec.head_count = 1;
  TokenSequence q = random_tokens(2, 2, 4, rng);
  const TokenSequence k = random_tokens(2, 2, 4, rng);
  const TokenSequence v = random_tokens(2, 2, 4, rng);
  q.at(1, 0, 2) = std::numeric_limits<double>::quiet_NaN();
  try {
    attention_forward(q, k, v, spec, explicit_scale(1.0));
    FAIL("expected domain_error");
  } catch (const std::domain_error& error) {
    CHECK(std::string(error.what()).find("frame 1") != std::string::npos);
  }
}

TEST_CASE("fuse_keys") {
  Rng rng(47);
  const TokenSequence a = random_tokens(2, 2, 4, rng);
  const TokenSequence b = random_tokens(2, 2, 4, rng);

  SUBCASE("sum with zero is the identity") {
    const TokenSequence zero = TokenSequence::zeros(2, 2, 4);
    const TokenSequence fused = fuse_keys(a, zero, FusionRule::sum);
    CHECK(fused.data == a.data);
  }
  SUBCASE("sum commutes") {
    CHECK(fuse_keys(a, b, FusionRule::sum).data ==
          fuse_keys(b, a, FusionRule::sum).data);
  }
  SUBCASE("identity-block projection recovers the sum") {
    Eigen::MatrixXd projection = Eigen::MatrixXd::Zero(8, 4);
    projection.topRows(4) = Eigen::MatrixXd::Identity(4, 4);
    projection.bottomRows(4) = Eigen::MatrixXd::Identity(4, 4);
    const TokenSequence fused = fuse_keys(a, b, FusionRule::concat_project, projection);
    const TokenSequence summed = fuse_keys(a, b, FusionRule::sum);
    for (std::size_t i = 0; i < fused.data.size(); ++i)
      CHECK(fused.data[i] == doctest::Approx(summed.data[i]).epsilon(1e-12));
  }
  SUBCASE("shape and projection validation") {
    const TokenSequence small = TokenSequence::zeros(2, 2, 2);
    CHECK_THROWS_AS(fuse_keys(a, small, FusionRule::sum), std::domain_error);
    CHECK_THROWS_AS(
        fuse_keys(a, b, FusionRule::concat_project, Eigen::MatrixXd::Zero(3, 4)),
        std::domain_error);
  }
}

TEST_CASE("attention gradient w.r.t. queries matches finite differences") {
  Rng rng(48);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    AttentionSpec spec;
    spec.model_dim = 8;
    spec.head_count = 2;
    spec.beta = {0.8, 1.2};
    const TemporalScale scale = explicit_scale(0.6);
    TokenSequence q = random_tokens(2, 2, 8, rng);
    const TokenSequence k = random_tokens(2, 2, 8, rng);
    const TokenSequence v = random_tokens(2, 2, 8, rng);
    const TokenSequence cot = random_tokens(2, 2, 8, rng);

    const TokenSequence analytic = attention_backward_q(q, k, v, spec, scale, cot);
    for (std::size_t i = 0; i < q.data.size(); ++i) {
      const double original = q.data[i];
      const auto objective = [&]() {
        const TokenSequence out = attention_forward(q, k, v, spec, scale);
        double sum = 0.0;
        for (std::size_t j = 0; j < out.data.size(); ++j)
          sum += out.data[j] * cot.data[j];
        return sum;
      };
      q.data[i] = original + h;
      const double up = objective();
      q.data[i] = original - h;
      const double down = objective();
      q.data[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      CHECK(std::abs(numeric - analytic.data[i]) <
            1e-4 * std::max(1.0, std::abs(analytic.data[i])));
    }
  }
}

TEST_CASE("static videos give scale-independent block outputs") {
  const auto shape = make_shape_template(ShapeKind::ball, 48, 51);
  const Trajectory still = Trajectory::constant(Eigen::Vector3d::Zero(), 1.0);
  const PointCloudVideo video = sample_video(still, shape, 4);
  const FeatureSet features = FeatureSet::from_positions(video);

  BlockConfig config;
  config.attention.model_dim = 16;
  config.attention.head_count = 2;
  config.anchors_per_frame = 16;
  config.kernel.base_radius = 0.4;
  config.rescale_temporal_radius = false;

  const TokenSequence one = gats_block_forward(video, features, config, explicit_scale(1.0));
  const TokenSequence two = gats_block_forward(video, features, config, explicit_scale(2.0));
  REQUIRE(one.data.size() == two.data.size());
  for (std::size_t i = 0; i < one.data.size(); ++i)
    CHECK(std::abs(one.data[i] - two.data[i]) <
          1e-12 * std::max(1.0, std::abs(one.data[i])));
}

TEST_CASE("single-frame block output matches the bias-free block bitwise") {
  const auto shape = make_shape_template(ShapeKind::cluster, 40, 52);
  PointCloudVideo video;
  video.frames.resize(1);
  for (std::size_t j = 0; j < shape.size(); ++j)
    video.frames[0].points.push_back({shape[j], 0, {}});
  const FeatureSet features = FeatureSet::from_positions(video);

  BlockConfig config;
  config.attention.model_dim = 16;
  config.attention.head_count = 4;
  config.anchors_per_frame = 12;
  BlockConfig no_bias = config;
  no_bias.attention.beta.assign(4, 0.0);

  const TokenSequence with_bias =
      gats_block_forward(video, features, config, explicit_scale(1.0));
  const TokenSequence without =
      gats_block_forward(video, features, no_bias, explicit_scale(1.0));
  CHECK(with_bias.data == without.data);
}

TEST_CASE("block forward is reproducible bit for bit") {
  const auto shape = make_shape_template(ShapeKind::ball, 64, 53);
  const Trajectory motion = Trajectory::constant({0.5, 0.25, 0.0}, 1.0);
  const PointCloudVideo video = sample_video(motion, shape, 4);
  const FeatureSet features = FeatureSet::from_positions(video);

  BlockConfig config;
  config.attention.model_dim = 32;
  config.attention.head_count = 4;
  config.anchors_per_frame = 16;
  const TemporalScale scale = scale_from_intervals(video.frame_interval, 0.25);

  const TokenSequence first = gats_block_forward(video, features, config, scale);
  const TokenSequence second = gats_block_forward(video, features, config, scale);
  CHECK(tokens_to_string(first) == tokens_to_string(second));

  // golden file round trip
  const auto path = std::filesystem::temp_directory_path() / "gats_block.tok";
  write_tokens(first, path);
  const TokenSequence reread = read_tokens(path);
  CHECK(reread.data == first.data);
  CHECK(reread.frames == first.frames);
}

TEST_CASE("TOK1 parse errors") {
  const auto path = std::filesystem::temp_directory_path() / "gats_bad.tok";
  std::ofstream(path) << "TOKX 1 1 1\n0\n";
  CHECK_THROWS_AS(read_tokens(path), ParseError);
  std::ofstream(path) << "TOK1 2 2 2\n0 1\n2 3\n";
  CHECK_THROWS_AS(read_tokens(path), ParseError);
}

TEST_CASE("concat_project fusion runs through the block") {
  const auto shape = make_shape_template(ShapeKind::ball, 32, 54);
  const Trajectory motion = Trajectory::constant({0.1, 0.0, 0.0}, 1.0);
  const PointCloudVideo video = sample_video(motion, shape, 3);
  const FeatureSet features = FeatureSet::from_positions(video);

  BlockConfig config;
  config.attention.model_dim = 8;
  config.attention.head_count = 2;
  config.attention.fusion_rule = FusionRule::concat_project;
  config.anchors_per_frame = 8;
  const TokenSequence out =
      gats_block_forward(video, features, config, explicit_scale(1.0));
  CHECK(out.frames == 3);
  CHECK(out.tokens_per_frame == 8);
  for (double v : out.data) CHECK(std::isfinite(v));
}
