#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "embedstory/dataset.hpp"
#include "embedstory/inference.hpp"
#include "embedstory/projection.hpp"
#include "embedstory/trainer.hpp"

namespace embedstory {

/// Slice ids in story order.
inline constexpr std::array<std::string_view, 6> kSliceIds{
    "snn_concept", "embedding_model", "euclidean_distance", "loss_function", "training", "inferencing"};

inline constexpr double kMarginMin = 0.0;
inline constexpr double kMarginMax = 5.0;

struct Asset {
  std::string ppm_base64;
  std::string label;
  bool operator==(const Asset&) const = default;
};

struct Bubble {
  std::string id;  // asset id
  double x = 0.0;
  double y = 0.0;
  std::string label;
  std::string color;
  bool operator==(const Bubble&) const = default;
};

struct TripletBubbles {
  Bubble anchor;
  Bubble positive;
  Bubble negative;
  bool operator==(const TripletBubbles&) const = default;
};

struct DistanceLine {
  std::string from;
  std::string to;
  std::string role;  // "anchor-positive" | "anchor-negative"
  double distance = 0.0;
  bool operator==(const DistanceLine&) const = default;
};

struct SliceText {
  std::string title;
  std::string narrative;
  bool operator==(const SliceText&) const = default;
};

struct SnnConceptSlice {
  SliceText text;
  std::vector<std::string> figure_asset_ids;
  bool operator==(const SnnConceptSlice&) const = default;
};

struct EmbeddingModelSlice {
  SliceText text;
  std::vector<std::string> sample_asset_ids;
  int grid_columns = 1;
  std::vector<std::string> before_grid;  // asset ids, row-major in grid_columns columns
  std::vector<Bubble> after_bubbles;
  std::string architecture_text;
  bool operator==(const EmbeddingModelSlice&) const = default;
};

struct EuclideanSlice {
  SliceText text;
  TripletBubbles bubbles;
  std::vector<DistanceLine> lines;
  std::string formula_text;
  bool operator==(const EuclideanSlice&) const = default;
};

struct LossSlice {
  SliceText text;
  TripletBubbles bubbles;
  double margin_default = 1.0;
  std::array<double, 2> margin_range{kMarginMin, kMarginMax};
  std::string loss_kind = "triplet";
  double initial_loss = 0.0;
  bool operator==(const LossSlice&) const = default;
};

struct TrainingFrame {
  int epoch = 0;
  std::vector<Bubble> bubbles;
  double loss = 0.0;
  bool operator==(const TrainingFrame&) const = default;
};

struct TrainingSlice {
  SliceText text;
  std::vector<TrainingFrame> frames;
  std::vector<double> loss_curve;
  bool operator==(const TrainingSlice&) const = default;
};

struct BundleNeighbor {
  std::string id;
  double distance = 0.0;
  std::vector<double> embedding;
  bool operator==(const BundleNeighbor&) const = default;
};

struct InferencingSlice {
  SliceText text;
  std::string query_asset_id;
  std::array<double, 2> query_coords{0.0, 0.0};
  double radius = 0.0;
  int k = 0;
  std::vector<double> query_embedding;
  std::vector<BundleNeighbor> neighbors;
  bool operator==(const InferencingSlice&) const = default;
};

struct QuizQuestion {
  std::string prompt;
  std::array<std::string, 4> choices;
  int answer_index = 0;
  bool operator==(const QuizQuestion&) const = default;
};

/// The single-file document the scrollytelling page renders.
struct StoryBundle {
  int format_version = 1;
  std::string scroll_mode = "steps";
  std::string dataset_fingerprint;
  std::vector<std::string> palette;
  std::vector<std::pair<std::string, std::string>> class_colors;  // class order
  std::map<std::string, Asset> assets;
  SnnConceptSlice snn_concept;
  EmbeddingModelSlice embedding_model;
  EuclideanSlice euclidean_distance;
  LossSlice loss_function;
  TrainingSlice training;
  InferencingSlice inferencing;
  std::optional<std::vector<QuizQuestion>> quiz;
  bool operator==(const StoryBundle&) const = default;
};

/// Titles and prose for the six slices plus the distance formula caption.
struct NarrativePack {
  std::map<std::string, SliceText> slices;
  std::string formula_text;
  std::string architecture_intro;
};

/// Reads {"slices": {id: {title, narrative}}, "formula_text", "architecture_intro"}.
/// Throws DataError when a slice id is missing.
NarrativePack narrative_pack_from_json(const nlohmann::json& doc);
NarrativePack load_narrative_pack(const std::filesystem::path& path);
std::filesystem::path default_narrative_pack_path();

/// brown, light brown, gray, black, white.
std::vector<std::string> default_palette();

/// The seven pre/post test questions, four choices each.
std::vector<QuizQuestion> default_quiz();

struct BundleOptions {
  std::vector<std::string> palette = default_palette();
  int samples_per_class = 2;
  bool include_quiz = true;
};

/// Throws DataError on fingerprint mismatch or inconsistent sizes.
StoryBundle build_bundle(const TrainingRun& run, const FramesFile& frames, const InferenceFile& inference,
                         const LabeledDataset& dataset, const NarrativePack& narrative,
                         const BundleOptions& options = {});

/// Fixed key order; identical bundles serialize to identical bytes.
nlohmann::ordered_json bundle_to_json(const StoryBundle& bundle);
std::string serialize_bundle(const StoryBundle& bundle);
/// Expects a document that validate_bundle accepts; throws DataError otherwise.
StoryBundle bundle_from_json(const nlohmann::ordered_json& doc);

struct BundleIssue {
  std::string path;
  std::string message;
};

/// Every violation found, empty when the bundle is valid.
std::vector<BundleIssue> validate_bundle(const nlohmann::json& doc);
/// Throws DataError when `text` is not JSON.
std::vector<BundleIssue> validate_bundle_text(std::string_view text);

/// Triplet-loss cases (2D coords, margin, expected loss and distances) that
/// the page's live recomputation is checked against.
nlohmann::ordered_json make_parity_fixture(std::uint64_t seed = 2024, int count = 20);

}  // namespace embedstory
