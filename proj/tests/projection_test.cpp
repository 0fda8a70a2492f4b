#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "embedstory/errors.hpp"
#include "embedstory/projection.hpp"
#include "embedstory/rng.hpp"

using namespace embedstory;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd gaussian(int n, int d, std::uint64_t seed, double scale = 1.0) {
  SplitMix64 rng(seed);
  MatrixXd X(n, d);
  for (auto& v : X.reshaped()) v = scale * rng.normal();
  return X;
}

// k clusters of `per` points around centers `spread` apart.
MatrixXd clusters(int k, int per, int d, double spread, std::uint64_t seed) {
  MatrixXd X = gaussian(k * per, d, seed);
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < per; ++i) X(c * per + i, c % d) += spread;
  }
  return X;
}

TsneConfig quick_config() {
  TsneConfig c;
  c.perplexity = 8;
  c.iterations = 300;
  c.exaggeration_iters = 60;
  c.momentum_switch_iter = 150;
  return c;
}

double mean_displacement(const MatrixXd& a, const MatrixXd& b) { return (a - b).rowwise().norm().mean(); }

}  // namespace

TEST(Affinities, SimplexRowsAreUniform) {
  const MatrixXd X = MatrixXd::Identity(6, 6);  // all pairwise distances sqrt(2)
  const auto cond = conditional_affinities(X, 3.0);
  for (Eigen::Index i = 0; i < 6; ++i) {
    for (Eigen::Index j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(cond.conditional(i, j), i == j ? 0.0 : 0.2);
    EXPECT_EQ(cond.beta(i), 0.0);
  }
}

TEST(Affinities, SymmetricNormalizedNonNegative) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const AffinityMatrix a = pairwise_affinities(gaussian(50, 5, seed), 15.0);
    EXPECT_NEAR(a.P.sum(), 1.0, 1e-9);
    EXPECT_EQ((a.P - a.P.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GE(a.P.minCoeff(), 0.0);
    EXPECT_TRUE(a.P.diagonal().isZero(0.0));
  }
}

TEST(Affinities, EntropyCalibratedFromReturnedBeta) {
  const MatrixXd X = gaussian(50, 5, 7);
  const double perplexity = 15.0;
  const auto cond = conditional_affinities(X, perplexity);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    // Independent recomputation: no shift, natural-log entropy converted to bits.
    std::vector<double> w;
    for (Eigen::Index j = 0; j < X.rows(); ++j) {
      if (j != i) w.push_back(std::exp(-cond.beta(i) * (X.row(i) - X.row(j)).squaredNorm()));
    }
    const double z = std::accumulate(w.begin(), w.end(), 0.0);
    double h = 0.0;
    for (double v : w) {
      if (v > 0.0) h -= (v / z) * std::log(v / z);
    }
    EXPECT_NEAR(h / std::log(2.0), std::log2(perplexity), 1e-5) << "row " << i;
    EXPECT_NEAR(cond.conditional.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(Affinities, Errors) {
  MatrixXd dup = MatrixXd::Ones(5, 3);
  try {
    conditional_affinities(dup, 2.0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 0"), std::string::npos);
  }
  EXPECT_THROW(conditional_affinities(gaussian(10, 2, 1), 10.0), DataError);
  EXPECT_THROW(conditional_affinities(gaussian(10, 2, 1), 1.0), DataError);
  EXPECT_THROW(conditional_affinities(gaussian(2, 2, 1), 1.5), DataError);
}

TEST(KlDivergence, Oracles) {
  MatrixXd P(3, 3);
  P << 0, .2, .15, .2, 0, .15, .15, .15, 0;
  MatrixXd Y(3, 2);
  Y << 0, 0, 1, 0, 0, 2;
  // Independent script: sum P log(P/Q), Q from 1/(1+d^2) normalized over i != j.
  EXPECT_NEAR(kl_divergence(P, Y), 0.065617267736727825, 1e-10);

  MatrixXd P2(2, 2);
  P2 << 0, .5, .5, 0;
  EXPECT_NEAR(kl_divergence(P2, gaussian(2, 2, 4)), 0.0, 1e-15);
  EXPECT_THROW(kl_divergence(P2, Y), ShapeError);
}

TEST(Tsne, DescendsAndNormalizes) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    TsneConfig cfg = quick_config();
    cfg.seed = seed;
    const ProjectionFrame f = tsne(clusters(4, 15, 6, 8.0, seed), cfg);
    EXPECT_LT(f.kl, f.kl_initial);
    EXPECT_GE(f.kl, 0.0);
    EXPECT_LE(f.coords.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_NEAR(f.coords.cwiseAbs().maxCoeff(), 1.0, 1e-12);
    EXPECT_LT(f.coords.colwise().mean().norm(), 1e-12);

    // KL decreases across at least 90% of 50-iteration windows after exaggeration.
    int windows = 0, decreasing = 0;
    for (std::size_t start = static_cast<std::size_t>(cfg.exaggeration_iters); start + 50 < f.kl_trace.size(); start += 10) {
      ++windows;
      decreasing += f.kl_trace[start + 50] < f.kl_trace[start];
    }
    ASSERT_GT(windows, 0);
    EXPECT_GE(decreasing, 0.9 * windows);
  }
}

TEST(Tsne, SeparatedClustersStaySeparated) {
  // Inter-cluster distance 100x the intra-cluster spread.
  MatrixXd X = gaussian(40, 10, 11, 0.1);
  for (int i = 20; i < 40; ++i) X(i, 0) += 10.0;
  const ProjectionFrame f = tsne(X, quick_config());
  double intra = 0.0, inter = 0.0;
  int n_intra = 0, n_inter = 0;
  for (int i = 0; i < 40; ++i) {
    for (int j = i + 1; j < 40; ++j) {
      const double d = (f.coords.row(i) - f.coords.row(j)).norm();
      if ((i < 20) == (j < 20)) {
        intra += d, ++n_intra;
      } else {
        inter += d, ++n_inter;
      }
    }
  }
  EXPECT_GT(inter / n_inter, intra / n_intra);
}

TEST(Tsne, PermutationEquivariant) {
  const MatrixXd X = clusters(3, 10, 4, 6.0, 5);
  const MatrixXd init = gaussian(30, 2, 6, 1e-2);
  std::vector<int> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[17]);
  MatrixXd Xp(30, 4), initp(30, 2);
  for (int i = 0; i < 30; ++i) {
    Xp.row(i) = X.row(perm[static_cast<std::size_t>(i)]);
    initp.row(i) = init.row(perm[static_cast<std::size_t>(i)]);
  }
  // A small step keeps the descent contractive. At the default rate rounding
  // differences from the summation order grow chaotically.
  TsneConfig cfg = quick_config();
  cfg.learning_rate = 5;
  cfg.iterations = 100;
  cfg.exaggeration_iters = 20;
  const ProjectionFrame a = tsne(X, cfg, init);
  const ProjectionFrame b = tsne(Xp, cfg, initp);
  for (int i = 0; i < 30; ++i) {
    EXPECT_NEAR((b.coords.row(i) - a.coords.row(perm[static_cast<std::size_t>(i)])).norm(), 0.0, 1e-8);
  }
}

TEST(Tsne, InitMustMatch) {
  TsneConfig cfg = quick_config();
  cfg.perplexity = 3;
  EXPECT_THROW(tsne(gaussian(10, 3, 1), cfg, MatrixXd::Zero(9, 2)), ShapeError);
  EXPECT_THROW(tsne(gaussian(10, 3, 1), cfg, MatrixXd::Zero(10, 3)), ShapeError);
}

TEST(TsneConfig, Validation) {
  TsneConfig c;
  EXPECT_NO_THROW(c.validate());
  c.perplexity = 1.0;
  EXPECT_THROW(c.validate(), DataError);
  c = {};
  c.exaggeration_iters = c.iterations + 1;
  EXPECT_THROW(c.validate(), DataError);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), DataError);
  c = {};
  c.early_exaggeration = 0.5;
  EXPECT_THROW(c.validate(), DataError);
}

TEST(ProjectRun, WarmStartedFramesAreCoherent) {
  // Snapshots: A, A, B with B a perturbed copy of A.
  const MatrixXd A = clusters(3, 10, 5, 6.0, 9);
  const MatrixXd B = A + gaussian(30, 5, 10, 1.5);
  const std::vector<EpochSnapshot> snaps{{0, A, 0.0}, {1, A, 0.0}, {2, B, 0.0}};
  TsneConfig cfg = quick_config();
  const auto frames = project_snapshots(snaps, tsne_stage(cfg));
  ASSERT_EQ(frames.size(), 3u);
  for (std::size_t e = 0; e < frames.size(); ++e) {
    EXPECT_EQ(frames[e].epoch, static_cast<int>(e));
    EXPECT_LE(frames[e].coords.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_EQ(frames[e].kl_trace.size(), e == 0 ? 300u : 60u);
  }
  EXPECT_LT(mean_displacement(frames[0].coords, frames[1].coords),
            mean_displacement(frames[1].coords, frames[2].coords));
  EXPECT_THROW(project_snapshots(std::vector<EpochSnapshot>{}, tsne_stage(cfg)), DataError);
}

TEST(FramesJson, RoundTrip) {
  const std::vector<EpochSnapshot> snaps{{0, gaussian(12, 3, 1), 0.0}, {1, gaussian(12, 3, 2), 0.0}};
  TsneConfig cfg = quick_config();
  cfg.perplexity = 4;
  cfg.iterations = 60;
  cfg.exaggeration_iters = 20;
  const auto frames = project_snapshots(snaps, tsne_stage(cfg));
  const auto doc = frames_to_json(frames, cfg, "fnv1a64:0000000000000001");
  const FramesFile back = frames_from_json(nlohmann::json::parse(doc.dump()));
  EXPECT_EQ(back.config, cfg);
  EXPECT_EQ(back.dataset_fingerprint, "fnv1a64:0000000000000001");
  ASSERT_EQ(back.frames.size(), 2u);
  EXPECT_EQ(back.frames[1].coords, frames[1].coords);
  EXPECT_EQ(back.frames[1].kl, frames[1].kl);
  EXPECT_EQ(frames_to_json(back.frames, back.config, back.dataset_fingerprint).dump(), doc.dump());
}
