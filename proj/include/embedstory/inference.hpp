#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "embedstory/dataset.hpp"
#include "embedstory/embedding_net.hpp"
#include "embedstory/projection.hpp"

namespace embedstory {

struct Neighbor {
  std::string id;
  double distance = 0.0;  // embedding-space Euclidean
  Eigen::Index index = 0;  // gallery row
  bool operator==(const Neighbor&) const = default;
};

struct InferenceResult {
  std::string query_id;
  Image query_image;
  Eigen::VectorXd query_embedding;
  Eigen::Vector2d query_coords_2d = Eigen::Vector2d::Zero();
  int k = 5;
  std::vector<Neighbor> neighbors;  // ascending distance, ties by id
  double radius_2d = 0.0;           // frame distance from the query to the last neighbor
};

/// Row 0 of forward(net, {img}).
Eigen::VectorXd embed_query(const EmbeddingNet& net, const Image& img);

/// The min(k, N) gallery rows closest to q, ascending by distance then id.
/// Throws DataError on an empty gallery or k < 1.
std::vector<Neighbor> nearest_neighbors(const Eigen::VectorXd& q, const Eigen::MatrixXd& gallery,
                                        std::span<const std::string> ids, int k);

/// Inverse-distance (1 / (d + 1e-9)) weighted mean of the frame coordinates of
/// the 3 gallery rows nearest to q in embedding space (ties to the lower row).
Eigen::Vector2d place_query_2d(const Eigen::VectorXd& q, const Eigen::MatrixXd& snapshot,
                               const Eigen::MatrixXd& frame_coords);

/// Embeds the query, ranks the gallery (the dataset embedded by `net`), places
/// the query into the last frame and sets the radius to its k-th neighbor.
InferenceResult build_inference(const EmbeddingNet& net, const LabeledDataset& data,
                                const std::vector<ProjectionFrame>& frames, const Image& query, int k);

/// {format_version, dataset_fingerprint, query_id, k, query_coords_2d, radius_2d,
///  neighbors, query_embedding, query_asset}.
nlohmann::ordered_json inference_to_json(const InferenceResult& result, const std::string& dataset_fingerprint);

struct InferenceFile {
  std::string dataset_fingerprint;
  InferenceResult result;
};
InferenceFile inference_from_json(const nlohmann::json& doc);

}  // namespace embedstory
