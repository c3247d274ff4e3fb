#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gats/gaussian.hpp"
#include "gats/rng.hpp"
#include "oracles.hpp"

using namespace gats;

namespace {

Neighborhood make_neighborhood(const std::vector<Eigen::Vector3d>& positions) {
  Neighborhood hood;
  for (int i = 0; i < static_cast<int>(positions.size()); ++i)
    hood.members.push_back({0, i, 0, positions[static_cast<std::size_t>(i)]});
  return hood;
}

std::vector<Eigen::Vector3d> random_cluster(Rng& rng, int count, double spread) {
  std::vector<Eigen::Vector3d> out;
  const Eigen::Vector3d base(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
  for (int i = 0; i < count; ++i)
    out.push_back(base + spread * Eigen::Vector3d(rng.normal(), rng.normal(),
                                                  rng.normal()));
  return out;
}

}  // namespace

TEST_CASE("two-point population covariance") {
  const LocalGaussian g =
      estimate_gaussian(make_neighborhood({{0, 0, 0}, {2, 0, 0}}));
  CHECK(g.mean.isApprox(Eigen::Vector3d(1, 0, 0)));
  CHECK(g.covariance(0, 0) == 1.0);
  CHECK(g.covariance(1, 1) == 0.0);
  CHECK(g.covariance(2, 2) == 0.0);
  CHECK(g.member_count == 2);
}

TEST_CASE("single member degenerates to the ridge floor") {
  const Eigen::Vector3d p(0.5, -1.0, 2.0);
  const LocalGaussian g = estimate_gaussian(make_neighborhood({p}));
  CHECK(g.mean == p);
  CHECK(g.covariance.isZero(0.0));
  const double ridge = 1e-6 * kCovarianceFloor;
  CHECK(g.covariance_reg(0, 0) == doctest::Approx(ridge).epsilon(1e-12));
  CHECK(g.condition_number == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("empty neighborhood is a domain error") {
  CHECK_THROWS_AS(estimate_gaussian(Neighborhood{}), std::domain_error);
}

TEST_CASE("estimation matches the two-pass oracle on anisotropic samples") {
  Rng rng(21);
  const Eigen::Vector3d stddev(2.0, 1.0, 0.5);  // covariance diag(4, 1, 0.25)
  std::vector<Eigen::Vector3d> points;
  std::vector<oracles::Vec3> raw;
  for (int i = 0; i < 64; ++i) {
    const Eigen::Vector3d p(stddev.x() * rng.normal(), stddev.y() * rng.normal(),
                            stddev.z() * rng.normal());
    points.push_back(p);
    raw.push_back({p.x(), p.y(), p.z()});
  }
  const LocalGaussian g = estimate_gaussian(make_neighborhood(points));
  const oracles::MeanCov expected = oracles::two_pass_mean_cov(raw);

  double scale = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      scale = std::max(scale, std::abs(expected.cov[static_cast<std::size_t>(r)]
                                                   [static_cast<std::size_t>(c)]));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(g.covariance(r, c) - expected.cov[static_cast<std::size_t>(r)]
                                                      [static_cast<std::size_t>(c)]) <=
            1e-14 * scale);
  for (int c = 0; c < 3; ++c)
    CHECK(g.mean[c] ==
          doctest::Approx(expected.mean[static_cast<std::size_t>(c)]).epsilon(1e-14));

  // 64 samples put the diagonal within a loose sampling envelope
  CHECK(g.covariance(0, 0) == doctest::Approx(4.0).epsilon(0.6));
  CHECK(g.covariance(1, 1) == doctest::Approx(1.0).epsilon(0.6));
  CHECK(g.covariance(2, 2) == doctest::Approx(0.25).epsilon(0.6));
}

TEST_CASE("condition number of diagonal matrices") {
  LocalGaussian g;
  g.covariance_reg = Eigen::Vector3d(4, 1, 1).asDiagonal();
  g.eigenvalues = eigenvalues_sym3(g.covariance_reg);
  g.condition_number = g.eigenvalues[0] / g.eigenvalues[2];
  CHECK(condition_number(g) == 4.0);

  g.covariance_reg = Eigen::Matrix3d::Identity();
  g.eigenvalues = eigenvalues_sym3(g.covariance_reg);
  CHECK(g.eigenvalues[0] / g.eigenvalues[2] == 1.0);
}

TEST_CASE("eigenvalues match the characteristic-polynomial oracle") {
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Matrix3d a;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) a(r, c) = rng.normal();
    const Eigen::Matrix3d spd =
        a * a.transpose() + Eigen::Matrix3d::Identity();

    const Eigen::Vector3d eigs = eigenvalues_sym3(spd);
    oracles::Mat3 m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = spd(r, c);
    const auto expected = oracles::cubic_eigenvalues(m);
    for (int c = 0; c < 3; ++c)
      CHECK(oracles::rel_err(eigs[c], expected[static_cast<std::size_t>(c)]) < 1e-9);
    CHECK(eigs[0] >= eigs[1]);
    CHECK(eigs[1] >= eigs[2]);
  }
}

TEST_CASE("gate midpoint, saturation and monotonicity") {
  GatingConfig config;
  CHECK(gating_alpha(std::exp(config.threshold), config) ==
        doctest::Approx(0.5).epsilon(1e-12));

  GatingConfig high;
  high.threshold = 20.0;
  CHECK(gating_alpha(1.0, high) == doctest::Approx(1.0).epsilon(1e-8));

  double previous = 2.0;
  for (const double cond : {1.0, 10.0, 100.0, 1000.0}) {
    const double alpha = gating_alpha(cond, config);
    CHECK(alpha < previous);
    previous = alpha;
  }
}

TEST_CASE("gate alpha is bounded and decreasing over [1, 1e12]") {
  GatingConfig config;
  double previous = 1.5;
  for (int step = 0; step <= 120; ++step) {
    const double cond = std::pow(10.0, 0.1 * step);
    const double alpha = gating_alpha(cond, config);
    CHECK(alpha >= 0.0);
    CHECK(alpha <= 1.0);
    CHECK(alpha < previous);
    previous = alpha;
  }
  CHECK_THROWS_AS(gating_alpha(0.5, config), std::domain_error);
}

TEST_CASE("gate_features endpoints and arithmetic") {
  const std::vector<double> f{4.0, 0.0};
  const std::vector<double> robust{0.0, 4.0};
  CHECK(gate_features(f, robust, 1.0) == f);
  CHECK(gate_features(f, robust, 0.0) == robust);
  CHECK(gate_features(f, robust, 0.25) == std::vector<double>{1.0, 3.0});
  CHECK_THROWS_AS(gate_features(f, std::vector<double>{1.0}, 0.5), std::domain_error);
}

TEST_CASE("gated output stays in the componentwise hull") {
  Rng rng(23);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> f(4), robust(4);
    for (int c = 0; c < 4; ++c) {
      f[static_cast<std::size_t>(c)] = rng.uniform(-10, 10);
      robust[static_cast<std::size_t>(c)] = rng.uniform(-10, 10);
    }
    const double alpha = rng.uniform();
    const auto out = gate_features(f, robust, alpha);
    for (int c = 0; c < 4; ++c) {
      const double lo = std::min(f[static_cast<std::size_t>(c)],
                                 robust[static_cast<std::size_t>(c)]);
      const double hi = std::max(f[static_cast<std::size_t>(c)],
                                 robust[static_cast<std::size_t>(c)]);
      CHECK(out[static_cast<std::size_t>(c)] >= lo - 1e-12);
      CHECK(out[static_cast<std::size_t>(c)] <= hi + 1e-12);
    }
  }
}

TEST_CASE("translation equivariance is exact on the dyadic lattice") {
  Rng rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Eigen::Vector3d> points;
    // power-of-two counts keep the mean division exact
    const int count = 1 << (1 + static_cast<int>(rng.bounded(5)));
    for (int i = 0; i < count; ++i)
      points.emplace_back(oracles::dyadic(rng), oracles::dyadic(rng),
                          oracles::dyadic(rng));
    const Eigen::Vector3d shift(static_cast<double>(rng.bounded(17)) - 8.0,
                                static_cast<double>(rng.bounded(17)) - 8.0,
                                static_cast<double>(rng.bounded(17)) - 8.0);

    const LocalGaussian base = estimate_gaussian(make_neighborhood(points));
    for (Eigen::Vector3d& p : points) p += shift;
    const LocalGaussian moved = estimate_gaussian(make_neighborhood(points));

    CHECK((moved.mean - (base.mean + shift)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((moved.covariance - base.covariance).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("rotation equivariance within 1e-9") {
  Rng rng(25);
  for (int trial = 0; trial < 50; ++trial) {
    const auto points = random_cluster(rng, 24, 0.5);
    const Eigen::Matrix3d r = oracles::random_rotation(rng);

    const LocalGaussian base = estimate_gaussian(make_neighborhood(points));
    std::vector<Eigen::Vector3d> rotated;
    for (const Eigen::Vector3d& p : points) rotated.push_back(r * p);
    const LocalGaussian turned = estimate_gaussian(make_neighborhood(rotated));

    const Eigen::Matrix3d expected = r * base.covariance * r.transpose();
    CHECK((turned.covariance - expected).cwiseAbs().maxCoeff() < 1e-9);
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(turned.eigenvalues[c] - base.eigenvalues[c]) < 1e-9);
    CHECK(oracles::rel_err(turned.condition_number, base.condition_number) < 1e-6);
  }
}

TEST_CASE("unregularized covariance is positive semidefinite") {
  Rng rng(26);
  for (int trial = 0; trial < 300; ++trial) {
    const int count = 1 + static_cast<int>(rng.bounded(30));
    const auto points = random_cluster(rng, count, 0.01 + rng.uniform());
    const LocalGaussian g = estimate_gaussian(make_neighborhood(points));
    CHECK(eigenvalues_sym3(g.covariance)[2] >= -1e-10);
  }
}

TEST_CASE("collinear and coplanar neighborhoods stay finite") {
  std::vector<Eigen::Vector3d> line;
  for (int i = 0; i < 10; ++i) line.emplace_back(0.1 * i, 0.0, 0.0);
  const LocalGaussian g = estimate_gaussian(make_neighborhood(line));
  CHECK(std::isfinite(g.condition_number));
  CHECK(g.condition_number >= 1.0);
  CHECK(g.eigenvalues[2] > 0.0);
  CHECK(std::isfinite(gating_alpha(g.condition_number)));
}
