#include "embedstory/inference.hpp"

#include <algorithm>
#include <numeric>

#include "embedstory/base64.hpp"
#include "embedstory/errors.hpp"

namespace embedstory {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd embed_query(const EmbeddingNet& net, const Image& img) {
  return embed(net, std::span<const Image>(&img, 1)).row(0).transpose();
}

std::vector<Neighbor> nearest_neighbors(const VectorXd& q, const MatrixXd& gallery, std::span<const std::string> ids,
                                        int k) {
  if (gallery.rows() == 0) throw DataError("nearest_neighbors: empty gallery");
  if (k < 1) throw DataError("nearest_neighbors: k must be >= 1");
  if (static_cast<Index>(ids.size()) != gallery.rows()) throw ShapeError("nearest_neighbors: ids and gallery disagree");
  if (q.size() != gallery.cols()) throw ShapeError("nearest_neighbors: query dimension mismatch");
  std::vector<Neighbor> all;
  all.reserve(ids.size());
  for (Index i = 0; i < gallery.rows(); ++i) {
    all.push_back({ids[static_cast<std::size_t>(i)], (gallery.row(i).transpose() - q).norm(), i});
  }
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
                    });
  all.resize(take);
  return all;
}

Eigen::Vector2d place_query_2d(const VectorXd& q, const MatrixXd& snapshot, const MatrixXd& frame_coords) {
  if (snapshot.rows() != frame_coords.rows() || frame_coords.cols() != 2) {
    throw ShapeError("place_query_2d: snapshot and frame are not row-aligned");
  }
  if (snapshot.rows() == 0) throw DataError("place_query_2d: empty gallery");
  if (q.size() != snapshot.cols()) throw ShapeError("place_query_2d: query dimension mismatch");
  std::vector<Index> order(static_cast<std::size_t>(snapshot.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  VectorXd dist(snapshot.rows());
  for (Index i = 0; i < snapshot.rows(); ++i) dist(i) = (snapshot.row(i).transpose() - q).norm();
  const auto take = std::min<std::size_t>(3, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](Index a, Index b) { return dist(a) != dist(b) ? dist(a) < dist(b) : a < b; });
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  double total = 0.0;
  for (std::size_t r = 0; r < take; ++r) {
    const double w = 1.0 / (dist(order[r]) + 1e-9);
    sum += w * frame_coords.row(order[r]).transpose();
    total += w;
  }
  return sum / total;
}

InferenceResult build_inference(const EmbeddingNet& net, const LabeledDataset& data,
                                const std::vector<ProjectionFrame>& frames, const Image& query, int k) {
  if (frames.empty()) throw DataError("build_inference: no projection frames");
  const MatrixXd gallery = embed(net, data.items);
  const MatrixXd& coords = frames.back().coords;
  if (coords.rows() != gallery.rows()) throw ShapeError("build_inference: frame and dataset sizes differ");
  std::vector<std::string> ids;
  ids.reserve(data.items.size());
  for (const auto& item : data.items) ids.push_back(item.id);

  InferenceResult result;
  result.query_id = query.id;
  result.query_image = query;
  result.k = k;
  result.query_embedding = embed_query(net, query);
  result.neighbors = nearest_neighbors(result.query_embedding, gallery, ids, k);
  result.query_coords_2d = place_query_2d(result.query_embedding, gallery, coords);
  const Neighbor& last = result.neighbors.back();
  result.radius_2d = (coords.row(last.index).transpose() - result.query_coords_2d).norm();
  return result;
}

nlohmann::ordered_json inference_to_json(const InferenceResult& r, const std::string& dataset_fingerprint) {
  nlohmann::ordered_json doc;
  doc["format_version"] = 1;
  doc["dataset_fingerprint"] = dataset_fingerprint;
  doc["query_id"] = r.query_id;
  doc["k"] = r.k;
  doc["query_coords_2d"] = {r.query_coords_2d.x(), r.query_coords_2d.y()};
  doc["radius_2d"] = r.radius_2d;
  nlohmann::ordered_json neighbors = nlohmann::ordered_json::array();
  for (const auto& n : r.neighbors) neighbors.push_back({{"id", n.id}, {"distance", n.distance}, {"index", n.index}});
  doc["neighbors"] = std::move(neighbors);
  doc["query_embedding"] = std::vector<double>(r.query_embedding.data(), r.query_embedding.data() + r.query_embedding.size());
  const auto ppm = write_ppm(r.query_image);
  doc["query_asset"] = {{"label", r.query_image.label}, {"ppm_base64", base64_encode(ppm)}};
  return doc;
}

InferenceFile inference_from_json(const nlohmann::json& doc) {
  if (doc.at("format_version").get<int>() != 1) throw DataError("inference: unsupported format_version");
  InferenceFile file;
  file.dataset_fingerprint = doc.at("dataset_fingerprint").get<std::string>();
  auto& r = file.result;
  r.query_id = doc.at("query_id").get<std::string>();
  r.k = doc.at("k").get<int>();
  const auto& qc = doc.at("query_coords_2d");
  r.query_coords_2d = {qc.at(0).get<double>(), qc.at(1).get<double>()};
  r.radius_2d = doc.at("radius_2d").get<double>();
  for (const auto& n : doc.at("neighbors")) {
    r.neighbors.push_back({n.at("id").get<std::string>(), n.at("distance").get<double>(), n.at("index").get<Index>()});
  }
  const auto emb = doc.at("query_embedding").get<std::vector<double>>();
  r.query_embedding = Eigen::Map<const VectorXd>(emb.data(), static_cast<Index>(emb.size()));
  const auto& asset = doc.at("query_asset");
  const auto bytes = base64_decode(asset.at("ppm_base64").get<std::string>());
  r.query_image = read_ppm(bytes);
  r.query_image.id = r.query_id;
  r.query_image.label = asset.at("label").get<std::string>();
  return file;
}

}  // namespace embedstory
