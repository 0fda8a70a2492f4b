#include "embedstory/projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "embedstory/errors.hpp"
#include "embedstory/rng.hpp"

namespace embedstory {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Well inside the 1e-5 bits callers rely on, so recomputed entropies keep a margin.
constexpr double kEntropyTolerance = 1e-9;
constexpr int kSearchSteps = 50;
constexpr double kQFloor = 1e-12;

MatrixXd squared_distances(const MatrixXd& X) {
  const VectorXd sq = X.rowwise().squaredNorm();
  MatrixXd D = (-2.0 * X * X.transpose()).colwise() + sq;
  D.rowwise() += sq.transpose();
  D = D.cwiseMax(0.0);
  D.diagonal().setZero();
  return D;
}

// p(j|i) over the shifted distances; returns the entropy in bits.
double conditional_row(const VectorXd& shifted, Index self, double beta, VectorXd& row) {
  row = (-beta * shifted).array().exp();
  row(self) = 0.0;
  row /= row.sum();
  double h = 0.0;
  for (Index j = 0; j < row.size(); ++j) {
    if (row(j) > 0.0) h -= row(j) * std::log2(row(j));
  }
  return h;
}

}  // namespace

void TsneConfig::validate() const {
  if (!(perplexity > 1.0)) throw DataError("perplexity must be > 1");
  if (iterations < 0) throw DataError("iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw DataError("learning_rate must be > 0");
  if (!(early_exaggeration >= 1.0)) throw DataError("early_exaggeration must be >= 1");
  if (exaggeration_iters < 0 || exaggeration_iters > iterations) {
    throw DataError("exaggeration_iters must lie in [0, iterations]");
  }
  if (!(momentum >= 0.0 && momentum < 1.0) || !(final_momentum >= 0.0 && final_momentum < 1.0)) {
    throw DataError("momentum must lie in [0, 1)");
  }
}

double entropy_bits(const VectorXd& row) {
  double h = 0.0;
  for (Index j = 0; j < row.size(); ++j) {
    if (row(j) > 0.0) h -= row(j) * std::log2(row(j));
  }
  return h;
}

ConditionalAffinities conditional_affinities(const MatrixXd& X, double perplexity) {
  const Index n = X.rows();
  if (n < 3) throw DataError("affinities need >= 3 points");
  if (!(perplexity > 1.0) || !(perplexity < static_cast<double>(n))) {
    throw DataError("perplexity must lie in (1, N) with N = " + std::to_string(n));
  }
  const MatrixXd D = squared_distances(X);
  const double target = std::log2(perplexity);
  ConditionalAffinities out{MatrixXd::Zero(n, n), VectorXd::Zero(n)};
  VectorXd row(n);
  for (Index i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    double dmax = 0.0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      dmin = std::min(dmin, D(i, j));
      dmax = std::max(dmax, D(i, j));
    }
    if (dmax == 0.0) {
      throw DataError("row " + std::to_string(i) + ": all distances are zero (duplicate points)");
    }
    // Shifting by the row minimum leaves p(.|i) unchanged and avoids underflow.
    VectorXd shifted = D.row(i).transpose().array() - dmin;
    shifted(i) = 0.0;
    if (dmax == dmin) {
      out.conditional.row(i).setConstant(1.0 / static_cast<double>(n - 1));
      out.conditional(i, i) = 0.0;
      continue;
    }
    double beta = static_cast<double>(n - 1) / shifted.sum();
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    for (int step = 0; step < kSearchSteps; ++step) {
      const double diff = conditional_row(shifted, i, beta, row) - target;
      if (std::abs(diff) <= kEntropyTolerance) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (lo + hi);
      } else {
        hi = beta;
        beta = 0.5 * (lo + hi);
      }
    }
    conditional_row(shifted, i, beta, row);
    out.conditional.row(i) = row.transpose();
    out.beta(i) = beta;
  }
  return out;
}

AffinityMatrix pairwise_affinities(const MatrixXd& X, double perplexity) {
  ConditionalAffinities cond = conditional_affinities(X, perplexity);
  const double n = static_cast<double>(X.rows());
  MatrixXd P = (cond.conditional + cond.conditional.transpose()) / (2.0 * n);
  return {std::move(P), std::move(cond.beta)};
}

namespace {

// Unnormalized Student-t kernel with zero diagonal.
MatrixXd student_kernel(const MatrixXd& Y) {
  MatrixXd num = (1.0 + squared_distances(Y).array()).inverse().matrix();
  num.diagonal().setZero();
  return num;
}

}  // namespace

double kl_divergence(const MatrixXd& P, const MatrixXd& Y) {
  if (P.rows() != P.cols() || P.rows() != Y.rows()) throw ShapeError("kl_divergence: P and Y disagree in size");
  const MatrixXd num = student_kernel(Y);
  const double total = num.sum();
  double kl = 0.0;
  for (Index i = 0; i < P.rows(); ++i) {
    for (Index j = 0; j < P.cols(); ++j) {
      if (i == j || P(i, j) <= 0.0) continue;
      const double q = std::max(num(i, j) / total, kQFloor);
      kl += P(i, j) * std::log(P(i, j) / q);
    }
  }
  return kl;
}

MatrixXd normalize_frame(const MatrixXd& Y) {
  MatrixXd out = Y.rowwise() - Y.colwise().mean();
  const double scale = out.cwiseAbs().maxCoeff();
  if (scale > 0.0) out /= scale;
  return out;
}

ProjectionFrame tsne(const MatrixXd& X, const TsneConfig& config, const std::optional<MatrixXd>& init) {
  config.validate();
  const Index n = X.rows();
  const AffinityMatrix aff = pairwise_affinities(X, config.perplexity);
  const MatrixXd& P = aff.P;

  MatrixXd Y(n, 2);
  if (init) {
    if (init->rows() != n || init->cols() != 2) throw ShapeError("tsne: init must be N x 2");
    Y = *init;
  } else {
    SplitMix64 rng(config.seed);
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < 2; ++c) Y(i, c) = 1e-2 * rng.normal();
    }
  }

  ProjectionFrame frame;
  frame.kl_initial = kl_divergence(P, Y);
  frame.kl_trace.reserve(static_cast<std::size_t>(config.iterations));
  MatrixXd update = MatrixXd::Zero(n, 2);
  for (int it = 0; it < config.iterations; ++it) {
    const double exaggeration = it < config.exaggeration_iters ? config.early_exaggeration : 1.0;
    const MatrixXd num = student_kernel(Y);
    const MatrixXd Q = num / num.sum();
    // grad_i = 4 * sum_j (P_ij - Q_ij) * num_ij * (y_i - y_j)
    const MatrixXd W = ((exaggeration * P) - Q).cwiseProduct(num);
    const MatrixXd grad = 4.0 * (W.rowwise().sum().asDiagonal() * Y - W * Y);
    const double mom = it < config.momentum_switch_iter ? config.momentum : config.final_momentum;
    update = mom * update - config.learning_rate * grad;
    Y += update;
    Y = Y.rowwise() - Y.colwise().mean();
    frame.kl_trace.push_back(kl_divergence(P, Y));
  }
  frame.raw = Y;
  frame.kl = kl_divergence(P, Y);
  frame.coords = normalize_frame(Y);
  return frame;
}

ProjectionStage tsne_stage(const TsneConfig& config) {
  return [config](const MatrixXd& snapshot, const ProjectionFrame* previous) {
    if (previous == nullptr) return tsne(snapshot, config);
    TsneConfig warm = config;
    warm.iterations = std::max(config.iterations / 5, 50);
    warm.early_exaggeration = 1.0;
    warm.exaggeration_iters = 0;
    return tsne(snapshot, warm, previous->raw);
  };
}

std::vector<ProjectionFrame> project_snapshots(std::span<const EpochSnapshot> snapshots, const ProjectionStage& stage) {
  if (snapshots.empty()) throw DataError("projection needs >= 1 snapshot");
  std::vector<ProjectionFrame> frames;
  frames.reserve(snapshots.size());
  for (const auto& snap : snapshots) {
    ProjectionFrame frame = stage(snap.embeddings, frames.empty() ? nullptr : &frames.back());
    frame.epoch = snap.epoch;
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::vector<ProjectionFrame> project_run(const TrainingRun& run, const TsneConfig& config) {
  return project_snapshots(run.snapshots, tsne_stage(config));
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::ordered_json tsne_config_to_json(const TsneConfig& c) {
  return {{"perplexity", c.perplexity},
          {"iterations", c.iterations},
          {"learning_rate", c.learning_rate},
          {"early_exaggeration", c.early_exaggeration},
          {"exaggeration_iters", c.exaggeration_iters},
          {"momentum", c.momentum},
          {"final_momentum", c.final_momentum},
          {"momentum_switch_iter", c.momentum_switch_iter},
          {"seed", c.seed}};
}

TsneConfig tsne_config_from_json(const nlohmann::json& doc) {
  TsneConfig c;
  c.perplexity = doc.at("perplexity").get<double>();
  c.iterations = doc.at("iterations").get<int>();
  c.learning_rate = doc.at("learning_rate").get<double>();
  c.early_exaggeration = doc.at("early_exaggeration").get<double>();
  c.exaggeration_iters = doc.at("exaggeration_iters").get<int>();
  c.momentum = doc.at("momentum").get<double>();
  c.final_momentum = doc.at("final_momentum").get<double>();
  c.momentum_switch_iter = doc.at("momentum_switch_iter").get<int>();
  c.seed = doc.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

nlohmann::ordered_json frames_to_json(const std::vector<ProjectionFrame>& frames, const TsneConfig& config,
                                      const std::string& dataset_fingerprint) {
  nlohmann::ordered_json doc;
  doc["format_version"] = 1;
  doc["dataset_fingerprint"] = dataset_fingerprint;
  doc["config"] = tsne_config_to_json(config);
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& f : frames) list.push_back({{"epoch", f.epoch}, {"kl", f.kl}, {"coords", matrix_to_json(f.coords)}});
  doc["frames"] = std::move(list);
  return doc;
}

FramesFile frames_from_json(const nlohmann::json& doc) {
  if (doc.at("format_version").get<int>() != 1) throw DataError("frames: unsupported format_version");
  FramesFile file;
  file.dataset_fingerprint = doc.at("dataset_fingerprint").get<std::string>();
  file.config = tsne_config_from_json(doc.at("config"));
  for (const auto& f : doc.at("frames")) {
    ProjectionFrame frame;
    frame.epoch = f.at("epoch").get<int>();
    frame.kl = f.at("kl").get<double>();
    frame.coords = matrix_from_json(f.at("coords"), 2);
    frame.raw = frame.coords;
    file.frames.push_back(std::move(frame));
  }
  return file;
}

}  // namespace embedstory
