#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "embedstory/trainer.hpp"

namespace embedstory {

struct TsneConfig {
  double perplexity = 15.0;
  int iterations = 500;
  double learning_rate = 100.0;
  double early_exaggeration = 4.0;
  int exaggeration_iters = 100;
  double momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch_iter = 250;
  std::uint64_t seed = 1;

  /// Static checks; perplexity < N is checked when the data is known.
  void validate() const;
  bool operator==(const TsneConfig&) const = default;
};

/// Symmetric joint probabilities with zero diagonal, plus the per-row Gaussian
/// precision found by the perplexity search.
struct AffinityMatrix {
  Eigen::MatrixXd P;
  Eigen::VectorXd beta;
};

struct ConditionalAffinities {
  Eigen::MatrixXd conditional;  // row i holds p(j|i)
  Eigen::VectorXd beta;
};

/// Row i: p(j|i) proportional to exp(-beta_i * |x_i - x_j|^2), with beta_i
/// bisected (at most 50 steps) until the base-2 entropy is within 1e-9 bits of
/// log2(perplexity). Rows whose distances are all equal are uniform (beta 0).
/// Throws DataError naming the row when every distance from it is zero.
ConditionalAffinities conditional_affinities(const Eigen::MatrixXd& X, double perplexity);

/// P = (p(j|i) + p(i|j)) / 2N.
AffinityMatrix pairwise_affinities(const Eigen::MatrixXd& X, double perplexity);

/// Shannon entropy in bits of a probability row, ignoring zero entries.
double entropy_bits(const Eigen::VectorXd& row);

/// KL(P || Q), Q the normalized Student-t (1 dof) kernel over Y with a 1e-12
/// floor. Pairs with P_ij = 0 contribute nothing.
double kl_divergence(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Y);

struct ProjectionFrame {
  int epoch = 0;
  Eigen::MatrixXd coords;  // N x 2, centered, scaled into [-1, 1]^2 with aspect kept
  double kl = 0.0;
  Eigen::MatrixXd raw;              // N x 2 optimizer output before normalization
  double kl_initial = 0.0;          // KL of the starting layout
  std::vector<double> kl_trace;     // KL (unexaggerated P) after every iteration
};

/// Exact t-SNE by momentum gradient descent on KL(P || Q). `init` defaults to a
/// seeded Gaussian layout with sigma 1e-2.
ProjectionFrame tsne(const Eigen::MatrixXd& X, const TsneConfig& config,
                     const std::optional<Eigen::MatrixXd>& init = std::nullopt);

/// Recenter to zero mean and divide by the largest absolute coordinate.
Eigen::MatrixXd normalize_frame(const Eigen::MatrixXd& Y);

/// A 2D projection step: maps one snapshot to a frame, optionally warm-started
/// from the previous frame.
using ProjectionStage = std::function<ProjectionFrame(const Eigen::MatrixXd& snapshot, const ProjectionFrame* previous)>;

/// Full run on a cold start; warm starts continue from previous->raw for
/// max(iterations / 5, 50) iterations without exaggeration.
ProjectionStage tsne_stage(const TsneConfig& config);

std::vector<ProjectionFrame> project_snapshots(std::span<const EpochSnapshot> snapshots, const ProjectionStage& stage);
std::vector<ProjectionFrame> project_run(const TrainingRun& run, const TsneConfig& config);

nlohmann::ordered_json tsne_config_to_json(const TsneConfig& config);
TsneConfig tsne_config_from_json(const nlohmann::json& doc);

/// {format_version, dataset_fingerprint, config, frames: [{epoch, kl, coords}]}.
nlohmann::ordered_json frames_to_json(const std::vector<ProjectionFrame>& frames, const TsneConfig& config,
                                      const std::string& dataset_fingerprint);

struct FramesFile {
  std::string dataset_fingerprint;
  TsneConfig config;
  std::vector<ProjectionFrame> frames;
};
FramesFile frames_from_json(const nlohmann::json& doc);

}  // namespace embedstory
