#pragma once

#include <filesystem>
#include <string>

#include "embedstory/dataset.hpp"
#include "embedstory/inference.hpp"
#include "embedstory/projection.hpp"
#include "embedstory/story_bundle.hpp"
#include "embedstory/trainer.hpp"

namespace embedstory::fixtures {

/// Every artifact of one pipeline run, kept in memory.
struct Pipeline {
  LabeledDataset data;
  TrainingRun run;
  std::vector<ProjectionFrame> frames;
  TsneConfig tsne;
  Image query;
  InferenceResult inference;
  StoryBundle bundle;
  std::string bundle_text;
};

/// Small and fast: 3 classes x 6 images of 10x10, 5 epochs, short t-SNE.
Pipeline small_pipeline(std::uint64_t seed = 5);

/// The desk-scale defaults (100 images of 16x16, 30 epochs, full t-SNE).
Pipeline desk_pipeline();

/// Artifacts go through their JSON files the way the CLI stages see them.
StoryBundle bundle_via_json(const Pipeline& p);

/// Random RGB or gray images of one shape, ids "img/<i>".
std::vector<Image> random_images(const InputShape& shape, int count, std::uint64_t seed);

struct NetGradientReport {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;  // perturbation crossed a ReLU or pool boundary
};

/// Central differences (step h) of sum(upstream .* forward(net, batch)) for
/// every parameter, against backward. Parameters whose +-h perturbation changes
/// the activation signature are skipped: the loss is not smooth there.
NetGradientReport network_gradient_check(const EmbeddingNet& net, std::span<const Image> batch,
                                         const Eigen::MatrixXd& upstream, double h = 1e-5);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace embedstory::fixtures
