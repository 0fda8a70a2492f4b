#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "embedstory/dataset.hpp"
#include "embedstory/embedding_net.hpp"
#include "embedstory/metric_losses.hpp"
#include "embedstory/rng.hpp"

namespace embedstory {

enum class Sampling { random, semi_hard };

struct HyperParams {
  int epochs = 30;
  int batch_triplets = 64;
  double learning_rate = 0.05;
  double margin = 1.0;
  LossKind loss_kind = LossKind::triplet;
  Sampling sampling = Sampling::random;
  std::uint64_t seed = 7;

  /// Throws DataError on epochs < 0, batch_triplets < 1 or learning_rate <= 0.
  void validate() const;
  bool operator==(const HyperParams&) const = default;
};

/// Dataset row indices of one training triplet.
struct TripletIndex {
  int anchor = 0;
  int positive = 0;
  int negative = 0;
  bool operator==(const TripletIndex&) const = default;
};

/// Draws `count` triplets: anchor uniform over all items, positive uniform over
/// the anchor's other class members, negative uniform over other classes.
/// Each pick consumes exactly one draw. With semi_hard, the negative is drawn
/// from {n : |a-p|^2 < |a-n|^2 < |a-p|^2 + margin} when that window is
/// non-empty, using the same single draw. `embeddings` is required for semi_hard.
std::vector<TripletIndex> sample_triplets(std::span<const int> labels, int count, Sampling strategy, SplitMix64& rng,
                                          const Eigen::MatrixXd* embeddings = nullptr, double margin = 1.0);

struct EpochSnapshot {
  int epoch = 0;
  Eigen::MatrixXd embeddings;  // N x D over the whole dataset
  double mean_loss = 0.0;
};

struct TrainingRun {
  std::string dataset_fingerprint;
  HyperParams hyperparams;
  std::vector<EpochSnapshot> snapshots;  // epochs + 1 entries, [0] is untrained
  EmbeddingNet final_net;
  /// Batch drawn for each epoch; batches[0] belongs to epoch 1. Not serialized
  /// except for its first triplet.
  std::vector<std::vector<TripletIndex>> batches;
  /// Ids of the first sampled triplet (anchor, positive, negative).
  std::array<std::string, 3> first_triplet;

  std::vector<double> loss_curve() const;
};

struct BatchLoss {
  double mean_loss = 0.0;
  Eigen::MatrixXd upstream;  // dL/d(embedding), rows aligned with the embeddings argument
};

/// Mean loss of a batch given precomputed embeddings (rows indexed like the dataset).
BatchLoss batch_loss(const Eigen::MatrixXd& embeddings, std::span<const TripletIndex> batch, LossKind kind,
                     double margin);

/// One SGD step per epoch on one batch of `batch_triplets`. Snapshot e holds the
/// embeddings after epoch e and the mean loss of epoch e's batch measured
/// before its step. Snapshot 0 holds the untrained embeddings; its loss is the
/// pre-step loss of the first batch.
TrainingRun train(const EmbeddingNet& net, const LabeledDataset& data, const HyperParams& hp);

/// The default architecture sized to the dataset's images, He-initialized
/// from derive_seed(hp.seed, 1), then trained.
TrainingRun train_from_scratch(const LabeledDataset& data, const HyperParams& hp);

/// Leave-one-out top-1: fraction of rows whose nearest other row (ties to the
/// lowest index) has the same label.
double retrieval_accuracy(const Eigen::MatrixXd& embeddings, std::span<const int> labels);
double evaluate_retrieval(const EmbeddingNet& net, const LabeledDataset& data);

nlohmann::ordered_json hyperparams_to_json(const HyperParams& hp);
HyperParams hyperparams_from_json(const nlohmann::json& doc);

nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& doc, Eigen::Index cols = -1);

/// {format_version, hyperparams, dataset_fingerprint, first_triplet, loss_curve, snapshots, final_net}.
nlohmann::ordered_json run_to_json(const TrainingRun& run);
TrainingRun run_from_json(const nlohmann::json& doc);

}  // namespace embedstory
