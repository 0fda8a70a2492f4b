#include "embedstory/story_bundle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "embedstory/base64.hpp"
#include "embedstory/errors.hpp"
#include "embedstory/metric_losses.hpp"
#include "embedstory/rng.hpp"

namespace embedstory {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Content

std::vector<std::string> default_palette() { return {"#5c4033", "#c4a484", "#808080", "#000000", "#ffffff"}; }

std::vector<QuizQuestion> default_quiz() {
  return {
      {"What is the origin of the word Siamese in Siamese Neural Network?",
       {"Siamese Cat", "Siamese Twin", "The Kingdom of Siam", "A Python package"},
       1},
      {"Which loss function is associated with the term Siamese?",
       {"Contrastive Loss", "Cross-Entropy Loss", "Mean Squared Error", "Softmax Loss"},
       0},
      {"What kind of network is the most popular at the heart of the image processing Embedding Model?",
       {"RNN or LSTM", "Decision Tree", "CNN or ConvNet", "Autoregressive Model"},
       2},
      {"A batch of data is organized as follows: 1) The original image 2) The image is nearly identical to the "
       "original. 3) The image does not resemble the original. What is the name of this type of batch?",
       {"Pairs", "Mini-batch", "Clusters", "Triplets"},
       3},
      {"What should you expect to observe throughout training?",
       {"Loss value gradually increases", "Loss value gradually decreases", "Accuracy stays constant",
        "Bubbles stop moving immediately"},
       1},
      {"What does it mean if similar objects are close together and dissimilar objects are separated?",
       {"The model is overfitting", "The margin is too small", "Training has diverged",
        "Loss value gradually decreases"},
       3},
      {"How will the final trained model be able to solve the business problem?",
       {"It compares a new object with trained objects, finds the similar ones, and can be reused as a "
        "pre-trained model",
        "It only sorts images into a fixed list of categories", "It generates new images of cats",
        "It compresses images for faster storage"},
       0},
  };
}

NarrativePack narrative_pack_from_json(const json& doc) {
  NarrativePack pack;
  const auto& slices = doc.at("slices");
  for (const auto id : kSliceIds) {
    const std::string key(id);
    if (!slices.contains(key)) throw DataError("narrative pack: missing slice '" + key + "'");
    const auto& s = slices.at(key);
    pack.slices[key] = {s.at("title").get<std::string>(), s.at("narrative").get<std::string>()};
  }
  pack.formula_text = doc.value("formula_text", std::string("d(a, b) = sqrt(sum_i (a_i - b_i)^2)"));
  pack.architecture_intro = doc.value("architecture_intro", std::string());
  return pack;
}

NarrativePack load_narrative_pack(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read narrative pack '" + path.string() + "'");
  try {
    return narrative_pack_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError("narrative pack '" + path.string() + "': " + e.what());
  }
}

std::filesystem::path default_narrative_pack_path() {
  return std::filesystem::path(EMBEDSTORY_RESOURCE_DIR) / "narrative_pack.json";
}

// ---------------------------------------------------------------------------
// Build

namespace {

Bubble make_bubble(const LabeledDataset& data, const std::map<std::string, std::string>& colors, Eigen::Index row,
                   const Eigen::MatrixXd& coords) {
  const Image& item = data.items[static_cast<std::size_t>(row)];
  return {item.id, coords(row, 0), coords(row, 1), item.label, colors.at(item.label)};
}

double bubble_distance(const Bubble& a, const Bubble& b) { return std::hypot(a.x - b.x, a.y - b.y); }

double triplet_loss_2d(const TripletBubbles& t, double margin) {
  const Triplet tri{Eigen::Vector2d(t.anchor.x, t.anchor.y), Eigen::Vector2d(t.positive.x, t.positive.y),
                    Eigen::Vector2d(t.negative.x, t.negative.y)};
  return triplet_loss(tri, Margin(margin)).loss;
}

}  // namespace

StoryBundle build_bundle(const TrainingRun& run, const FramesFile& frames, const InferenceFile& inference,
                         const LabeledDataset& dataset, const NarrativePack& narrative, const BundleOptions& options) {
  const std::string fingerprint = dataset_fingerprint(dataset);
  auto require_match = [&](const std::string& what, const std::string& fp) {
    if (fp != fingerprint) {
      throw DataError(what + " fingerprint " + fp + " does not match dataset fingerprint " + fingerprint);
    }
  };
  require_match("training run", run.dataset_fingerprint);
  require_match("frames", frames.dataset_fingerprint);
  require_match("inference", inference.dataset_fingerprint);
  if (frames.frames.size() != run.snapshots.size()) {
    throw DataError("frames count " + std::to_string(frames.frames.size()) + " != snapshot count " +
                    std::to_string(run.snapshots.size()));
  }
  const auto n = static_cast<Eigen::Index>(dataset.items.size());
  for (const auto& f : frames.frames) {
    if (f.coords.rows() != n || f.coords.cols() != 2) throw DataError("frame rows do not match the dataset");
  }
  if (options.palette.empty()) throw DataError("palette must not be empty");

  std::map<std::string, Eigen::Index> row_of;
  for (Eigen::Index i = 0; i < n; ++i) row_of[dataset.items[static_cast<std::size_t>(i)].id] = i;
  auto lookup = [&](const std::string& id) {
    const auto it = row_of.find(id);
    if (it == row_of.end()) throw DataError("unresolved asset reference '" + id + "'");
    return it->second;
  };

  StoryBundle b;
  b.dataset_fingerprint = fingerprint;
  b.palette = options.palette;
  for (const auto& c : dataset.classes) b.class_colors.emplace_back(c, dataset.class_colors.at(c));
  for (const auto& item : dataset.items) b.assets[item.id] = {base64_encode(write_ppm(item)), item.label};
  const std::string query_asset_id = "query:" + inference.result.query_id;
  b.assets[query_asset_id] = {base64_encode(write_ppm(inference.result.query_image)), inference.result.query_image.label};

  const auto& colors = dataset.class_colors;
  const Eigen::MatrixXd& first_coords = frames.frames.front().coords;
  const Eigen::MatrixXd& last_coords = frames.frames.back().coords;
  const TripletBubbles triplet{make_bubble(dataset, colors, lookup(run.first_triplet[0]), first_coords),
                               make_bubble(dataset, colors, lookup(run.first_triplet[1]), first_coords),
                               make_bubble(dataset, colors, lookup(run.first_triplet[2]), first_coords)};

  b.snn_concept.text = narrative.slices.at("snn_concept");
  b.snn_concept.figure_asset_ids = {triplet.anchor.id, triplet.positive.id, triplet.negative.id};

  auto& em = b.embedding_model;
  em.text = narrative.slices.at("embedding_model");
  std::map<std::string, int> taken;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Image& item = dataset.items[static_cast<std::size_t>(i)];
    if (taken[item.label]++ >= options.samples_per_class) continue;
    em.sample_asset_ids.push_back(item.id);
    em.after_bubbles.push_back(make_bubble(dataset, colors, i, last_coords));
  }
  em.grid_columns = std::max(1, options.samples_per_class);
  em.before_grid = em.sample_asset_ids;
  em.architecture_text = narrative.architecture_intro.empty()
                             ? describe_architecture(run.final_net.architecture, run.final_net.input_shape)
                             : narrative.architecture_intro + " " +
                                   describe_architecture(run.final_net.architecture, run.final_net.input_shape);

  auto& eu = b.euclidean_distance;
  eu.text = narrative.slices.at("euclidean_distance");
  eu.bubbles = triplet;
  eu.lines = {{triplet.anchor.id, triplet.positive.id, "anchor-positive", bubble_distance(triplet.anchor, triplet.positive)},
              {triplet.anchor.id, triplet.negative.id, "anchor-negative", bubble_distance(triplet.anchor, triplet.negative)}};
  eu.formula_text = narrative.formula_text;

  auto& lf = b.loss_function;
  lf.text = narrative.slices.at("loss_function");
  lf.bubbles = triplet;
  lf.margin_default = std::clamp(run.hyperparams.margin, kMarginMin, kMarginMax);
  lf.initial_loss = triplet_loss_2d(triplet, lf.margin_default);

  auto& tr = b.training;
  tr.text = narrative.slices.at("training");
  tr.loss_curve = run.loss_curve();
  for (std::size_t e = 0; e < frames.frames.size(); ++e) {
    TrainingFrame frame;
    frame.epoch = run.snapshots[e].epoch;
    frame.loss = run.snapshots[e].mean_loss;
    for (Eigen::Index i = 0; i < n; ++i) frame.bubbles.push_back(make_bubble(dataset, colors, i, frames.frames[e].coords));
    tr.frames.push_back(std::move(frame));
  }

  auto& inf = b.inferencing;
  const InferenceResult& r = inference.result;
  const Eigen::MatrixXd gallery = embed(run.final_net, dataset.items);
  inf.text = narrative.slices.at("inferencing");
  inf.query_asset_id = query_asset_id;
  inf.query_coords = {r.query_coords_2d.x(), r.query_coords_2d.y()};
  inf.radius = r.radius_2d;
  inf.k = r.k;
  inf.query_embedding.assign(r.query_embedding.data(), r.query_embedding.data() + r.query_embedding.size());
  for (const auto& nb : r.neighbors) {
    const Eigen::Index row = lookup(nb.id);
    const Eigen::VectorXd e = gallery.row(row).transpose();
    inf.neighbors.push_back({nb.id, nb.distance, std::vector<double>(e.data(), e.data() + e.size())});
  }
  if (options.include_quiz) b.quiz = default_quiz();
  return b;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

ojson text_fields(ojson obj, const SliceText& t) {
  obj["title"] = t.title;
  obj["narrative"] = t.narrative;
  return obj;
}

ojson bubble_json(const Bubble& b) {
  return {{"id", b.id}, {"x", b.x}, {"y", b.y}, {"class", b.label}, {"color", b.color}};
}

ojson triplet_json(const TripletBubbles& t) {
  return {{"anchor", bubble_json(t.anchor)}, {"positive", bubble_json(t.positive)}, {"negative", bubble_json(t.negative)}};
}

ojson bubbles_json(const std::vector<Bubble>& bubbles) {
  ojson out = ojson::array();
  for (const auto& b : bubbles) out.push_back(bubble_json(b));
  return out;
}

}  // namespace

ojson bundle_to_json(const StoryBundle& b) {
  ojson doc;
  doc["format_version"] = b.format_version;
  doc["scroll_mode"] = b.scroll_mode;
  doc["dataset_fingerprint"] = b.dataset_fingerprint;
  doc["palette"] = b.palette;
  ojson colors = ojson::object();
  for (const auto& [c, hex] : b.class_colors) colors[c] = hex;
  doc["class_colors"] = colors;
  ojson assets = ojson::object();
  for (const auto& [id, a] : b.assets) assets[id] = {{"label", a.label}, {"ppm_base64", a.ppm_base64}};
  doc["assets"] = std::move(assets);

  ojson slices = ojson::array();
  slices.push_back(text_fields({{"id", "snn_concept"}}, b.snn_concept.text));
  slices.back()["figure_asset_ids"] = b.snn_concept.figure_asset_ids;

  const auto& em = b.embedding_model;
  ojson s = text_fields({{"id", "embedding_model"}}, em.text);
  s["sample_asset_ids"] = em.sample_asset_ids;
  s["before_grid"] = {{"columns", em.grid_columns}, {"asset_ids", em.before_grid}};
  s["after_bubbles"] = bubbles_json(em.after_bubbles);
  s["architecture_text"] = em.architecture_text;
  slices.push_back(std::move(s));

  const auto& eu = b.euclidean_distance;
  s = text_fields({{"id", "euclidean_distance"}}, eu.text);
  s["bubbles"] = triplet_json(eu.bubbles);
  ojson lines = ojson::array();
  for (const auto& l : eu.lines) lines.push_back({{"from", l.from}, {"to", l.to}, {"role", l.role}, {"distance", l.distance}});
  s["lines"] = std::move(lines);
  s["formula_text"] = eu.formula_text;
  slices.push_back(std::move(s));

  const auto& lf = b.loss_function;
  s = text_fields({{"id", "loss_function"}}, lf.text);
  s["bubbles"] = triplet_json(lf.bubbles);
  s["margin_default"] = lf.margin_default;
  s["margin_range"] = lf.margin_range;
  s["loss_kind"] = lf.loss_kind;
  s["initial_loss"] = lf.initial_loss;
  slices.push_back(std::move(s));

  const auto& tr = b.training;
  s = text_fields({{"id", "training"}}, tr.text);
  ojson frames = ojson::array();
  for (const auto& f : tr.frames) frames.push_back({{"epoch", f.epoch}, {"loss", f.loss}, {"bubbles", bubbles_json(f.bubbles)}});
  s["frames"] = std::move(frames);
  s["loss_curve"] = tr.loss_curve;
  slices.push_back(std::move(s));

  const auto& inf = b.inferencing;
  s = text_fields({{"id", "inferencing"}}, inf.text);
  s["query_asset_id"] = inf.query_asset_id;
  s["query_coords"] = inf.query_coords;
  s["radius"] = inf.radius;
  s["k"] = inf.k;
  s["query_embedding"] = inf.query_embedding;
  ojson neighbors = ojson::array();
  for (const auto& nb : inf.neighbors) neighbors.push_back({{"id", nb.id}, {"distance", nb.distance}, {"embedding", nb.embedding}});
  s["neighbors"] = std::move(neighbors);
  slices.push_back(std::move(s));
  doc["slices"] = std::move(slices);

  if (b.quiz) {
    ojson quiz = ojson::array();
    for (const auto& q : *b.quiz) quiz.push_back({{"prompt", q.prompt}, {"choices", q.choices}, {"answer_index", q.answer_index}});
    doc["quiz"] = std::move(quiz);
  }
  return doc;
}

std::string serialize_bundle(const StoryBundle& bundle) { return bundle_to_json(bundle).dump() + "\n"; }

namespace {

SliceText text_from(const ojson& s) { return {s.at("title").get<std::string>(), s.at("narrative").get<std::string>()}; }

Bubble bubble_from(const ojson& j) {
  return {j.at("id").get<std::string>(), j.at("x").get<double>(), j.at("y").get<double>(), j.at("class").get<std::string>(),
          j.at("color").get<std::string>()};
}

TripletBubbles triplet_from(const ojson& j) {
  return {bubble_from(j.at("anchor")), bubble_from(j.at("positive")), bubble_from(j.at("negative"))};
}

std::vector<Bubble> bubbles_from(const ojson& j) {
  std::vector<Bubble> out;
  for (const auto& b : j) out.push_back(bubble_from(b));
  return out;
}

}  // namespace

StoryBundle bundle_from_json(const ojson& doc) {
  if (const auto issues = validate_bundle(json::parse(doc.dump())); !issues.empty()) {
    throw DataError("invalid bundle: " + issues.front().path + ": " + issues.front().message);
  }
  StoryBundle b;
  b.format_version = doc.at("format_version").get<int>();
  b.scroll_mode = doc.at("scroll_mode").get<std::string>();
  b.dataset_fingerprint = doc.at("dataset_fingerprint").get<std::string>();
  b.palette = doc.at("palette").get<std::vector<std::string>>();
  for (const auto& [c, hex] : doc.at("class_colors").items()) b.class_colors.emplace_back(c, hex.get<std::string>());
  for (const auto& [id, a] : doc.at("assets").items()) {
    b.assets[id] = {a.at("ppm_base64").get<std::string>(), a.at("label").get<std::string>()};
  }
  const auto& slices = doc.at("slices");

  b.snn_concept.text = text_from(slices[0]);
  b.snn_concept.figure_asset_ids = slices[0].at("figure_asset_ids").get<std::vector<std::string>>();

  const auto& em = slices[1];
  b.embedding_model.text = text_from(em);
  b.embedding_model.sample_asset_ids = em.at("sample_asset_ids").get<std::vector<std::string>>();
  b.embedding_model.grid_columns = em.at("before_grid").at("columns").get<int>();
  b.embedding_model.before_grid = em.at("before_grid").at("asset_ids").get<std::vector<std::string>>();
  b.embedding_model.after_bubbles = bubbles_from(em.at("after_bubbles"));
  b.embedding_model.architecture_text = em.at("architecture_text").get<std::string>();

  const auto& eu = slices[2];
  b.euclidean_distance.text = text_from(eu);
  b.euclidean_distance.bubbles = triplet_from(eu.at("bubbles"));
  for (const auto& l : eu.at("lines")) {
    b.euclidean_distance.lines.push_back({l.at("from").get<std::string>(), l.at("to").get<std::string>(),
                                          l.at("role").get<std::string>(), l.at("distance").get<double>()});
  }
  b.euclidean_distance.formula_text = eu.at("formula_text").get<std::string>();

  const auto& lf = slices[3];
  b.loss_function.text = text_from(lf);
  b.loss_function.bubbles = triplet_from(lf.at("bubbles"));
  b.loss_function.margin_default = lf.at("margin_default").get<double>();
  b.loss_function.margin_range = lf.at("margin_range").get<std::array<double, 2>>();
  b.loss_function.loss_kind = lf.at("loss_kind").get<std::string>();
  b.loss_function.initial_loss = lf.at("initial_loss").get<double>();

  const auto& tr = slices[4];
  b.training.text = text_from(tr);
  for (const auto& f : tr.at("frames")) {
    b.training.frames.push_back({f.at("epoch").get<int>(), bubbles_from(f.at("bubbles")), f.at("loss").get<double>()});
  }
  b.training.loss_curve = tr.at("loss_curve").get<std::vector<double>>();

  const auto& inf = slices[5];
  b.inferencing.text = text_from(inf);
  b.inferencing.query_asset_id = inf.at("query_asset_id").get<std::string>();
  b.inferencing.query_coords = inf.at("query_coords").get<std::array<double, 2>>();
  b.inferencing.radius = inf.at("radius").get<double>();
  b.inferencing.k = inf.at("k").get<int>();
  b.inferencing.query_embedding = inf.at("query_embedding").get<std::vector<double>>();
  for (const auto& nb : inf.at("neighbors")) {
    b.inferencing.neighbors.push_back(
        {nb.at("id").get<std::string>(), nb.at("distance").get<double>(), nb.at("embedding").get<std::vector<double>>()});
  }
  if (doc.contains("quiz")) {
    std::vector<QuizQuestion> quiz;
    for (const auto& q : doc.at("quiz")) {
      quiz.push_back({q.at("prompt").get<std::string>(), q.at("choices").get<std::array<std::string, 4>>(),
                      q.at("answer_index").get<int>()});
    }
    b.quiz = std::move(quiz);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

constexpr double kRederiveTolerance = 1e-9;

bool is_hex_color(const json& j) {
  if (!j.is_string()) return false;
  const auto s = j.get<std::string>();
  return s.size() == 7 && s[0] == '#' &&
         std::all_of(s.begin() + 1, s.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)) != 0; });
}

bool close(double a, double b) { return std::abs(a - b) <= kRederiveTolerance * std::max(1.0, std::abs(b)); }

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

class Checker {
 public:
  explicit Checker(std::vector<BundleIssue>& issues) : issues_(issues) {}

  void fail(const std::string& path, const std::string& message) { issues_.push_back({path, message}); }

  const json* field(const json& obj, const std::string& path, const char* key) {
    if (!obj.is_object() || !obj.contains(key)) {
      fail(path + "." + key, "missing field");
      return nullptr;
    }
    return &obj.at(key);
  }

  bool is_number(const json* j, const std::string& path) {
    if (j == nullptr) return false;
    if (!j->is_number()) {
      fail(path, "expected a number");
      return false;
    }
    return true;
  }

  bool is_string(const json* j, const std::string& path) {
    if (j == nullptr) return false;
    if (!j->is_string()) {
      fail(path, "expected a string");
      return false;
    }
    return true;
  }

  bool is_array(const json* j, const std::string& path) {
    if (j == nullptr) return false;
    if (!j->is_array()) {
      fail(path, "expected an array");
      return false;
    }
    return true;
  }

  std::optional<double> number(const json& obj, const std::string& path, const char* key) {
    const json* j = field(obj, path, key);
    if (!is_number(j, path + "." + key)) return std::nullopt;
    return j->get<double>();
  }

  std::optional<std::string> string(const json& obj, const std::string& path, const char* key) {
    const json* j = field(obj, path, key);
    if (!is_string(j, path + "." + key)) return std::nullopt;
    return j->get<std::string>();
  }

  void asset_ref(const json& id, const std::string& path) {
    if (!id.is_string()) {
      fail(path, "asset reference must be a string");
    } else if (!assets.count(id.get<std::string>())) {
      fail(path, "unknown asset id '" + id.get<std::string>() + "'");
    }
  }

  void color_ref(const json& color, const std::string& path) {
    if (!is_hex_color(color)) {
      fail(path, "expected a #rrggbb color");
    } else if (!allowed_colors.count(color.get<std::string>())) {
      fail(path, "color " + color.get<std::string>() + " is neither in the palette nor a class color");
    }
  }

  void text(const json& s, const std::string& path) {
    string(s, path, "title");
    string(s, path, "narrative");
  }

  /// Bubble with asset id, coords in [-1, 1], class and color. Returns (x, y) when well formed.
  std::optional<std::array<double, 2>> bubble(const json& b, const std::string& path) {
    if (!b.is_object()) {
      fail(path, "expected a bubble object");
      return std::nullopt;
    }
    if (const json* id = field(b, path, "id")) asset_ref(*id, path + ".id");
    const auto x = number(b, path, "x");
    const auto y = number(b, path, "y");
    if (const auto label = string(b, path, "class"); label && !classes.count(*label)) {
      fail(path + ".class", "unknown class '" + *label + "'");
    }
    if (const json* c = field(b, path, "color")) color_ref(*c, path + ".color");
    if (!x || !y) return std::nullopt;
    if (std::abs(*x) > 1.0 || std::abs(*y) > 1.0) fail(path, "coordinates outside [-1, 1]");
    return std::array<double, 2>{*x, *y};
  }

  struct TripletCoords {
    std::array<std::array<double, 2>, 3> xy;
    std::array<std::string, 3> ids;
  };

  std::optional<TripletCoords> triplet(const json& t, const std::string& path) {
    TripletCoords out;
    bool ok = true;
    const char* roles[3] = {"anchor", "positive", "negative"};
    for (int r = 0; r < 3; ++r) {
      const json* b = field(t, path, roles[r]);
      if (b == nullptr) {
        ok = false;
        continue;
      }
      const auto xy = bubble(*b, path + "." + roles[r]);
      if (!xy) {
        ok = false;
        continue;
      }
      out.xy[static_cast<std::size_t>(r)] = *xy;
      out.ids[static_cast<std::size_t>(r)] = b->value("id", std::string());
    }
    if (!ok) return std::nullopt;
    return out;
  }

  std::set<std::string> assets;
  std::set<std::string> classes;
  std::set<std::string> allowed_colors;

 private:
  std::vector<BundleIssue>& issues_;
};

std::string expected_order() {
  std::string s;
  for (const auto id : kSliceIds) s += (s.empty() ? "" : ", ") + std::string(id);
  return s;
}

void check_snn_concept(Checker& c, const json& s, const std::string& path) {
  const json* ids = c.field(s, path, "figure_asset_ids");
  if (!c.is_array(ids, path + ".figure_asset_ids")) return;
  for (std::size_t i = 0; i < ids->size(); ++i) c.asset_ref((*ids)[i], path + ".figure_asset_ids[" + std::to_string(i) + "]");
}

void check_embedding_model(Checker& c, const json& s, const std::string& path) {
  if (const json* ids = c.field(s, path, "sample_asset_ids"); c.is_array(ids, path + ".sample_asset_ids")) {
    for (std::size_t i = 0; i < ids->size(); ++i) c.asset_ref((*ids)[i], path + ".sample_asset_ids[" + std::to_string(i) + "]");
  }
  if (const json* grid = c.field(s, path, "before_grid")) {
    const std::string gp = path + ".before_grid";
    if (const auto cols = c.number(*grid, gp, "columns"); cols && *cols < 1) c.fail(gp + ".columns", "must be >= 1");
    if (const json* ids = c.field(*grid, gp, "asset_ids"); c.is_array(ids, gp + ".asset_ids")) {
      for (std::size_t i = 0; i < ids->size(); ++i) c.asset_ref((*ids)[i], gp + ".asset_ids[" + std::to_string(i) + "]");
    }
  }
  if (const json* bubbles = c.field(s, path, "after_bubbles"); c.is_array(bubbles, path + ".after_bubbles")) {
    for (std::size_t i = 0; i < bubbles->size(); ++i) c.bubble((*bubbles)[i], path + ".after_bubbles[" + std::to_string(i) + "]");
  }
  c.string(s, path, "architecture_text");
}

void check_euclidean(Checker& c, const json& s, const std::string& path) {
  const json* bubbles = c.field(s, path, "bubbles");
  const auto tri = bubbles ? c.triplet(*bubbles, path + ".bubbles") : std::nullopt;
  c.string(s, path, "formula_text");
  const json* lines = c.field(s, path, "lines");
  if (!c.is_array(lines, path + ".lines")) return;
  for (std::size_t i = 0; i < lines->size(); ++i) {
    const json& line = (*lines)[i];
    const std::string lp = path + ".lines[" + std::to_string(i) + "]";
    const auto role = c.string(line, lp, "role");
    const auto from = c.string(line, lp, "from");
    const auto to = c.string(line, lp, "to");
    const auto distance = c.number(line, lp, "distance");
    if (!role) continue;
    int other = 0;
    if (*role == "anchor-positive") {
      other = 1;
    } else if (*role == "anchor-negative") {
      other = 2;
    } else {
      c.fail(lp + ".role", "role must be anchor-positive or anchor-negative");
      continue;
    }
    if (!tri) continue;
    if (from && *from != tri->ids[0]) c.fail(lp + ".from", "expected the anchor id '" + tri->ids[0] + "'");
    if (to && *to != tri->ids[static_cast<std::size_t>(other)]) {
      c.fail(lp + ".to", "expected '" + tri->ids[static_cast<std::size_t>(other)] + "'");
    }
    if (distance) {
      const auto& a = tri->xy[0];
      const auto& b = tri->xy[static_cast<std::size_t>(other)];
      const double expect = std::hypot(a[0] - b[0], a[1] - b[1]);
      if (!close(*distance, expect)) {
        c.fail(lp + ".distance", "stored " + fmt(*distance) + " but the bubble coordinates give " + fmt(expect));
      }
    }
  }
}

void check_loss(Checker& c, const json& s, const std::string& path) {
  const json* bubbles = c.field(s, path, "bubbles");
  const auto tri = bubbles ? c.triplet(*bubbles, path + ".bubbles") : std::nullopt;
  const auto margin = c.number(s, path, "margin_default");
  if (const json* range = c.field(s, path, "margin_range"); c.is_array(range, path + ".margin_range")) {
    if (*range != json::array({kMarginMin, kMarginMax})) {
      c.fail(path + ".margin_range", "expected [" + fmt(kMarginMin) + ", " + fmt(kMarginMax) + "]");
    }
  }
  if (margin && (*margin < kMarginMin || *margin > kMarginMax)) c.fail(path + ".margin_default", "outside margin_range");
  if (const auto kind = c.string(s, path, "loss_kind"); kind && *kind != "triplet") {
    c.fail(path + ".loss_kind", "expected \"triplet\"");
  }
  const auto initial = c.number(s, path, "initial_loss");
  if (tri && margin && initial && *margin >= 0.0) {
    const Triplet t{Eigen::Vector2d(tri->xy[0][0], tri->xy[0][1]), Eigen::Vector2d(tri->xy[1][0], tri->xy[1][1]),
                    Eigen::Vector2d(tri->xy[2][0], tri->xy[2][1])};
    const double expect = triplet_loss(t, Margin(*margin)).loss;
    if (!close(*initial, expect)) {
      c.fail(path + ".initial_loss", "inconsistent: stored " + fmt(*initial) + " but recomputed " + fmt(expect));
    }
  }
}

// Returns id -> (x, y) of the last frame for the inferencing checks.
std::map<std::string, std::array<double, 2>> check_training(Checker& c, const json& s, const std::string& path) {
  std::map<std::string, std::array<double, 2>> last;
  const json* frames = c.field(s, path, "frames");
  const json* curve = c.field(s, path, "loss_curve");
  const bool frames_ok = c.is_array(frames, path + ".frames");
  const bool curve_ok = c.is_array(curve, path + ".loss_curve");
  if (curve_ok) {
    for (std::size_t i = 0; i < curve->size(); ++i) {
      if (!(*curve)[i].is_number() || (*curve)[i].get<double>() < 0.0) {
        c.fail(path + ".loss_curve[" + std::to_string(i) + "]", "expected a non-negative number");
      }
    }
  }
  if (!frames_ok) return last;
  if (frames->empty()) c.fail(path + ".frames", "needs at least one frame");
  if (curve_ok && curve->size() != frames->size()) {
    c.fail(path + ".frames", "frame count " + std::to_string(frames->size()) + " != loss_curve length " +
                                 std::to_string(curve->size()));
  }
  std::set<std::string> first_ids;
  for (std::size_t e = 0; e < frames->size(); ++e) {
    const json& f = (*frames)[e];
    const std::string fp = path + ".frames[" + std::to_string(e) + "]";
    if (const auto epoch = c.number(f, fp, "epoch")) {
      if (e == 0 && *epoch != 0) c.fail(fp + ".epoch", "first frame must be epoch 0");
      if (e > 0 && (*frames)[e - 1].is_object() && (*frames)[e - 1].contains("epoch") &&
          (*frames)[e - 1]["epoch"].is_number() && *epoch <= (*frames)[e - 1]["epoch"].get<double>()) {
        c.fail(fp + ".epoch", "epochs must increase");
      }
    }
    if (const auto loss = c.number(f, fp, "loss"); loss && curve_ok && e < curve->size() &&
                                                    (*curve)[e].is_number() && !close(*loss, (*curve)[e].get<double>())) {
      c.fail(fp + ".loss", "differs from loss_curve[" + std::to_string(e) + "]");
    }
    const json* bubbles = c.field(f, fp, "bubbles");
    if (!c.is_array(bubbles, fp + ".bubbles")) continue;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < bubbles->size(); ++i) {
      const json& b = (*bubbles)[i];
      const auto xy = c.bubble(b, fp + ".bubbles[" + std::to_string(i) + "]");
      const std::string id = b.is_object() ? b.value("id", std::string()) : std::string();
      if (!ids.insert(id).second) c.fail(fp + ".bubbles[" + std::to_string(i) + "]", "duplicate bubble id '" + id + "'");
      if (xy && e + 1 == frames->size()) last[id] = *xy;
    }
    if (e == 0) {
      first_ids = ids;
    } else if (ids != first_ids) {
      c.fail(fp + ".bubbles", "bubble ids differ from frame 0");
    }
  }
  return last;
}

void check_inferencing(Checker& c, const json& s, const std::string& path,
                       const std::map<std::string, std::array<double, 2>>& final_frame) {
  if (const json* q = c.field(s, path, "query_asset_id")) c.asset_ref(*q, path + ".query_asset_id");
  std::optional<std::array<double, 2>> query;
  if (const json* qc = c.field(s, path, "query_coords"); c.is_array(qc, path + ".query_coords")) {
    if (qc->size() == 2 && (*qc)[0].is_number() && (*qc)[1].is_number()) {
      query = std::array<double, 2>{(*qc)[0].get<double>(), (*qc)[1].get<double>()};
    } else {
      c.fail(path + ".query_coords", "expected [x, y]");
    }
  }
  const auto radius = c.number(s, path, "radius");
  const auto k = c.number(s, path, "k");
  if (k && (*k < 1 || *k != std::floor(*k))) c.fail(path + ".k", "must be a positive integer");
  std::optional<std::vector<double>> q_embedding;
  if (const json* qe = c.field(s, path, "query_embedding"); c.is_array(qe, path + ".query_embedding")) {
    if (std::all_of(qe->begin(), qe->end(), [](const json& v) { return v.is_number(); })) {
      q_embedding = qe->get<std::vector<double>>();
    } else {
      c.fail(path + ".query_embedding", "expected numbers");
    }
  }
  const json* neighbors = c.field(s, path, "neighbors");
  if (!c.is_array(neighbors, path + ".neighbors")) return;
  if (k && !final_frame.empty()) {
    const auto expect = std::min<std::size_t>(static_cast<std::size_t>(std::max(*k, 0.0)), final_frame.size());
    if (neighbors->size() != expect) {
      c.fail(path + ".neighbors", "expected min(k, gallery size) = " + std::to_string(expect) + " neighbors, found " +
                                      std::to_string(neighbors->size()));
    }
  }
  std::optional<std::pair<double, std::string>> previous;
  std::string last_id;
  for (std::size_t i = 0; i < neighbors->size(); ++i) {
    const json& nb = (*neighbors)[i];
    const std::string np = path + ".neighbors[" + std::to_string(i) + "]";
    const json* id = c.field(nb, np, "id");
    if (id) c.asset_ref(*id, np + ".id");
    const auto distance = c.number(nb, np, "distance");
    const std::string id_s = id && id->is_string() ? id->get<std::string>() : std::string();
    last_id = id_s;
    if (distance) {
      if (previous && (*distance < previous->first || (*distance == previous->first && id_s < previous->second))) {
        c.fail(np, "neighbors must be sorted by distance, ties by id");
      }
      previous = std::pair{*distance, id_s};
    }
    if (!id_s.empty() && !final_frame.empty() && !final_frame.count(id_s)) {
      c.fail(np + ".id", "'" + id_s + "' has no bubble in the final training frame");
    }
    const json* emb = c.field(nb, np, "embedding");
    if (!c.is_array(emb, np + ".embedding") || !distance || !q_embedding) continue;
    if (emb->size() != q_embedding->size() ||
        !std::all_of(emb->begin(), emb->end(), [](const json& v) { return v.is_number(); })) {
      c.fail(np + ".embedding", "dimension differs from query_embedding");
      continue;
    }
    double sq = 0.0;
    for (std::size_t d = 0; d < emb->size(); ++d) {
      const double diff = (*emb)[d].get<double>() - (*q_embedding)[d];
      sq += diff * diff;
    }
    const double expect = std::sqrt(sq);
    if (!close(*distance, expect)) {
      c.fail(np + ".distance", "stored " + fmt(*distance) + " but the embeddings give " + fmt(expect));
    }
  }
  if (radius && query && !last_id.empty() && final_frame.count(last_id)) {
    const auto& xy = final_frame.at(last_id);
    const double expect = std::hypot(xy[0] - (*query)[0], xy[1] - (*query)[1]);
    if (!close(*radius, expect)) {
      c.fail(path + ".radius", "stored " + fmt(*radius) + " but the distance to the k-th neighbor bubble is " + fmt(expect));
    }
  }
}

void check_quiz(Checker& c, const json& quiz) {
  if (!quiz.is_array()) {
    c.fail("quiz", "expected an array");
    return;
  }
  if (quiz.size() != 7) c.fail("quiz", "expected 7 questions, found " + std::to_string(quiz.size()));
  for (std::size_t i = 0; i < quiz.size(); ++i) {
    const std::string qp = "quiz[" + std::to_string(i) + "]";
    c.string(quiz[i], qp, "prompt");
    if (const json* choices = c.field(quiz[i], qp, "choices"); c.is_array(choices, qp + ".choices")) {
      if (choices->size() != 4 || !std::all_of(choices->begin(), choices->end(), [](const json& v) { return v.is_string(); })) {
        c.fail(qp + ".choices", "expected exactly 4 strings");
      }
    }
    if (const auto a = c.number(quiz[i], qp, "answer_index"); a && (*a < 0 || *a > 3 || *a != std::floor(*a))) {
      c.fail(qp + ".answer_index", "must be 0..3");
    }
  }
}

}  // namespace

std::vector<BundleIssue> validate_bundle(const json& doc) {
  std::vector<BundleIssue> issues;
  Checker c(issues);
  if (!doc.is_object()) {
    c.fail("", "bundle must be a JSON object");
    return issues;
  }
  if (const json* v = c.field(doc, "", "format_version"); v && *v != 1) c.fail("format_version", "expected 1");
  if (const json* m = c.field(doc, "", "scroll_mode"); m && *m != "steps") c.fail("scroll_mode", "expected \"steps\"");
  c.string(doc, "", "dataset_fingerprint");

  if (const json* palette = c.field(doc, "", "palette"); c.is_array(palette, "palette")) {
    if (palette->empty()) c.fail("palette", "must not be empty");
    for (std::size_t i = 0; i < palette->size(); ++i) {
      if (!is_hex_color((*palette)[i])) {
        c.fail("palette[" + std::to_string(i) + "]", "expected a #rrggbb color");
      } else {
        c.allowed_colors.insert((*palette)[i].get<std::string>());
      }
    }
  }
  if (const json* colors = c.field(doc, "", "class_colors")) {
    if (!colors->is_object()) {
      c.fail("class_colors", "expected an object");
    } else {
      for (const auto& [cls, hex] : colors->items()) {
        c.classes.insert(cls);
        if (!is_hex_color(hex)) {
          c.fail("class_colors." + cls, "expected a #rrggbb color");
        } else {
          c.allowed_colors.insert(hex.get<std::string>());
        }
      }
    }
  }
  if (const json* assets = c.field(doc, "", "assets")) {
    if (!assets->is_object()) {
      c.fail("assets", "expected an object");
    } else {
      for (const auto& [id, a] : assets->items()) {
        c.assets.insert(id);
        const std::string ap = "assets." + id;
        c.string(a, ap, "label");
        const auto data = c.string(a, ap, "ppm_base64");
        if (!data) continue;
        try {
          read_ppm(base64_decode(*data));
        } catch (const std::exception& e) {
          c.fail(ap + ".ppm_base64", std::string("not a valid base64 PPM: ") + e.what());
        }
      }
    }
  }

  const json* slices = c.field(doc, "", "slices");
  if (c.is_array(slices, "slices")) {
    std::vector<std::string> ids;
    for (const auto& s : *slices) ids.push_back(s.is_object() ? s.value("id", std::string("?")) : std::string("?"));
    const bool ordered = ids.size() == kSliceIds.size() &&
                         std::equal(ids.begin(), ids.end(), kSliceIds.begin(),
                                    [](const std::string& a, std::string_view b) { return a == b; });
    if (!ordered) c.fail("slices", "expected exactly 6 slices in order: " + expected_order());

    std::map<std::string, std::array<double, 2>> final_frame;
    const json* inferencing = nullptr;
    std::string inferencing_path;
    for (std::size_t i = 0; i < slices->size(); ++i) {
      const json& s = (*slices)[i];
      const std::string sp = "slices[" + std::to_string(i) + "]";
      if (!s.is_object()) {
        c.fail(sp, "expected a slice object");
        continue;
      }
      c.text(s, sp);
      const std::string& id = ids[i];
      if (id == "snn_concept") {
        check_snn_concept(c, s, sp);
      } else if (id == "embedding_model") {
        check_embedding_model(c, s, sp);
      } else if (id == "euclidean_distance") {
        check_euclidean(c, s, sp);
      } else if (id == "loss_function") {
        check_loss(c, s, sp);
      } else if (id == "training") {
        final_frame = check_training(c, s, sp);
      } else if (id == "inferencing") {
        inferencing = &s;
        inferencing_path = sp;
      } else {
        c.fail(sp + ".id", "unknown slice id '" + id + "'");
      }
    }
    if (inferencing) check_inferencing(c, *inferencing, inferencing_path, final_frame);
  }
  if (doc.contains("quiz")) check_quiz(c, doc.at("quiz"));
  return issues;
}

std::vector<BundleIssue> validate_bundle_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("bundle is not valid JSON: ") + e.what());
  }
  return validate_bundle(doc);
}

// ---------------------------------------------------------------------------
// Parity fixture

ojson make_parity_fixture(std::uint64_t seed, int count) {
  SplitMix64 rng(seed);
  ojson cases = ojson::array();
  for (int i = 0; i < count; ++i) {
    std::array<Eigen::Vector2d, 3> p;
    for (auto& v : p) v = {2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0};
    // Quarter-unit margin steps keep the fixture readable; case 0 uses margin 0.
    double margin = i == 0 ? 0.0 : 0.25 * static_cast<double>(rng.below(21));
    if (i == 1) p[1] = p[0];  // positive on the anchor
    if (i == 2) p[2] = p[1];  // positive == negative -> loss == margin
    const Triplet t{p[0], p[1], p[2]};
    const double loss = triplet_loss(t, Margin(margin)).loss;
    cases.push_back({{"anchor", {p[0].x(), p[0].y()}},
                     {"positive", {p[1].x(), p[1].y()}},
                     {"negative", {p[2].x(), p[2].y()}},
                     {"margin", margin},
                     {"distance_ap", euclidean_distance(p[0], p[1])},
                     {"distance_an", euclidean_distance(p[0], p[2])},
                     {"expected_loss", loss}});
  }
  ojson doc;
  doc["format_version"] = 1;
  doc["formula"] = "max(0, |a-p|^2 - |a-n|^2 + margin)";
  doc["tolerance"] = 1e-9;
  doc["cases"] = std::move(cases);
  return doc;
}

}  // namespace embedstory
