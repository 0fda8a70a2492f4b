#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "embedstory/errors.hpp"
#include "embedstory/story_bundle.hpp"
#include "support.hpp"

using namespace embedstory;
using nlohmann::json;

namespace {

const fixtures::Pipeline& pipeline() {
  static const fixtures::Pipeline p = fixtures::small_pipeline();
  return p;
}

json bundle_doc() { return json::parse(pipeline().bundle_text); }

bool has_issue(const std::vector<BundleIssue>& issues, const std::string& path, const std::string& fragment) {
  return std::any_of(issues.begin(), issues.end(), [&](const BundleIssue& i) {
    return i.path == path && i.message.find(fragment) != std::string::npos;
  });
}

json& slice(json& doc, const std::string& id) {
  for (auto& s : doc["slices"]) {
    if (s["id"] == id) return s;
  }
  throw std::runtime_error("no slice " + id);
}

// Squared-distance hinge written out directly from coordinates.
double hinge(const json& a, const json& p, const json& n, double margin) {
  const auto sq = [](const json& u, const json& v) {
    const double dx = u[0].get<double>() - v[0].get<double>(), dy = u[1].get<double>() - v[1].get<double>();
    return dx * dx + dy * dy;
  };
  return std::max(0.0, sq(a, p) - sq(a, n) + margin);
}

json xy(const json& bubble) { return json::array({bubble["x"], bubble["y"]}); }

}  // namespace

TEST(Bundle, PipelineBundleValidates) {
  const auto issues = validate_bundle_text(pipeline().bundle_text);
  for (const auto& i : issues) ADD_FAILURE() << i.path << ": " << i.message;
  const json doc = bundle_doc();
  ASSERT_EQ(doc["slices"].size(), 6u);
  for (std::size_t i = 0; i < kSliceIds.size(); ++i) EXPECT_EQ(doc["slices"][i]["id"], std::string(kSliceIds[i]));
  EXPECT_EQ(doc["format_version"], 1);
  EXPECT_EQ(doc["dataset_fingerprint"], dataset_fingerprint(pipeline().data));
}

TEST(Bundle, TrainingFramesCoverEveryEpoch) {
  json doc = bundle_doc();
  const json& tr = slice(doc, "training");
  const auto epochs = static_cast<std::size_t>(pipeline().run.hyperparams.epochs);
  ASSERT_EQ(tr["frames"].size(), epochs + 1);
  for (std::size_t e = 0; e <= epochs; ++e) {
    EXPECT_EQ(tr["frames"][e]["epoch"], static_cast<int>(e));
    EXPECT_EQ(tr["frames"][e]["bubbles"].size(), pipeline().data.items.size());
    EXPECT_EQ(tr["frames"][e]["loss"], tr["loss_curve"][e]);
  }
}

TEST(Bundle, InitialLossRederives) {
  json doc = bundle_doc();
  const json& lf = slice(doc, "loss_function");
  const json& b = lf["bubbles"];
  const double expect = hinge(xy(b["anchor"]), xy(b["positive"]), xy(b["negative"]), lf["margin_default"].get<double>());
  EXPECT_NEAR(lf["initial_loss"].get<double>(), expect, 1e-12);
  EXPECT_EQ(lf["margin_range"], json::array({0.0, 5.0}));
}

TEST(Bundle, EuclideanLinesRederive) {
  json doc = bundle_doc();
  const json& eu = slice(doc, "euclidean_distance");
  ASSERT_EQ(eu["lines"].size(), 2u);
  const json& b = eu["bubbles"];
  const double ap = std::hypot(b["anchor"]["x"].get<double>() - b["positive"]["x"].get<double>(),
                               b["anchor"]["y"].get<double>() - b["positive"]["y"].get<double>());
  EXPECT_EQ(eu["lines"][0]["role"], "anchor-positive");
  EXPECT_NEAR(eu["lines"][0]["distance"].get<double>(), ap, 1e-12);
}

TEST(Bundle, ReorderedSlicesAreRejected) {
  json doc = bundle_doc();
  std::swap(doc["slices"][2], doc["slices"][3]);
  const auto issues = validate_bundle(doc);
  EXPECT_TRUE(has_issue(issues, "slices", "in order"));
}

TEST(Bundle, MissingSliceIsRejected) {
  json doc = bundle_doc();
  doc["slices"].erase(4);
  EXPECT_TRUE(has_issue(validate_bundle(doc), "slices", "exactly 6"));
}

TEST(Bundle, UnknownAssetIdIsNamed) {
  json doc = bundle_doc();
  slice(doc, "snn_concept")["figure_asset_ids"][0] = "ghost/404";
  const auto issues = validate_bundle(doc);
  ASSERT_FALSE(issues.empty());
  EXPECT_TRUE(std::any_of(issues.begin(), issues.end(),
                          [](const BundleIssue& i) { return i.message.find("'ghost/404'") != std::string::npos; }));
}

TEST(Bundle, TamperedInitialLossIsFlagged) {
  json doc = bundle_doc();
  auto& lf = slice(doc, "loss_function");
  lf["initial_loss"] = lf["initial_loss"].get<double>() + 0.1;
  EXPECT_TRUE(has_issue(validate_bundle(doc), "slices[3].initial_loss", "inconsistent"));
}

TEST(Bundle, EveryIssueIsReported) {
  json doc = bundle_doc();
  doc["scroll_mode"] = "free";
  doc["palette"][0] = "brown";
  auto& lf = slice(doc, "loss_function");
  lf["initial_loss"] = lf["initial_loss"].get<double>() + 0.1;
  auto& tr = slice(doc, "training");
  tr["frames"][1]["bubbles"][0]["x"] = 1.5;
  auto& inf = slice(doc, "inferencing");
  inf["radius"] = inf["radius"].get<double>() + 0.25;
  const auto issues = validate_bundle(doc);
  EXPECT_GE(issues.size(), 5u);
  EXPECT_TRUE(has_issue(issues, "scroll_mode", ""));
  EXPECT_TRUE(has_issue(issues, "slices[3].initial_loss", ""));
  EXPECT_TRUE(has_issue(issues, "slices[5].radius", ""));
}

TEST(Bundle, NeighborInvariantsAreChecked) {
  json doc = bundle_doc();
  auto& nbs = slice(doc, "inferencing")["neighbors"];
  ASSERT_GE(nbs.size(), 2u);
  std::swap(nbs[0], nbs[1]);
  EXPECT_FALSE(validate_bundle(doc).empty());

  doc = bundle_doc();
  auto& nb0 = slice(doc, "inferencing")["neighbors"][0];
  nb0["distance"] = nb0["distance"].get<double>() + 1e-3;
  EXPECT_FALSE(validate_bundle(doc).empty());
}

TEST(Bundle, NonJsonThrows) {
  EXPECT_THROW(validate_bundle_text("{not json"), DataError);
  EXPECT_FALSE(validate_bundle_text("[1, 2]").empty());
}

TEST(Bundle, RoundTripsThroughText) {
  const StoryBundle& b = pipeline().bundle;
  const std::string text = serialize_bundle(b);
  ASSERT_TRUE(validate_bundle_text(text).empty());
  const StoryBundle back = bundle_from_json(nlohmann::ordered_json::parse(text));
  EXPECT_EQ(back, b);
  EXPECT_EQ(serialize_bundle(back), text);
}

TEST(Bundle, BuildIsByteDeterministic) {
  const auto p = fixtures::small_pipeline();
  EXPECT_EQ(p.bundle_text, pipeline().bundle_text);
  EXPECT_EQ(serialize_bundle(fixtures::bundle_via_json(p)), p.bundle_text);
}

TEST(Bundle, FingerprintMismatchThrows) {
  const auto& p = pipeline();
  const auto pack = load_narrative_pack(default_narrative_pack_path());
  FramesFile frames{dataset_fingerprint(p.data), p.tsne, p.frames};
  InferenceFile inf{dataset_fingerprint(p.data), p.inference};
  EXPECT_NO_THROW(build_bundle(p.run, frames, inf, p.data, pack));
  frames.dataset_fingerprint = "fnv1a64:0000000000000000";
  EXPECT_THROW(build_bundle(p.run, frames, inf, p.data, pack), DataError);
  frames.dataset_fingerprint = dataset_fingerprint(p.data);
  frames.frames.pop_back();
  EXPECT_THROW(build_bundle(p.run, frames, inf, p.data, pack), DataError);
}

TEST(Bundle, QuizCanBeLeftOut) {
  const auto& p = pipeline();
  BundleOptions opts;
  opts.include_quiz = false;
  const auto b = build_bundle(p.run, {dataset_fingerprint(p.data), p.tsne, p.frames},
                              {dataset_fingerprint(p.data), p.inference}, p.data,
                              load_narrative_pack(default_narrative_pack_path()), opts);
  EXPECT_FALSE(b.quiz.has_value());
  EXPECT_FALSE(bundle_to_json(b).contains("quiz"));
  EXPECT_TRUE(validate_bundle_text(serialize_bundle(b)).empty());
}

TEST(Quiz, SevenQuestionsWithKnownAnswers) {
  const auto quiz = default_quiz();
  ASSERT_EQ(quiz.size(), 7u);
  for (const auto& q : quiz) {
    EXPECT_FALSE(q.prompt.empty());
    EXPECT_GE(q.answer_index, 0);
    EXPECT_LE(q.answer_index, 3);
    for (const auto& c : q.choices) EXPECT_FALSE(c.empty());
  }
  EXPECT_NE(quiz[0].prompt.find("origin of the word Siamese"), std::string::npos);
  EXPECT_EQ(quiz[0].choices[static_cast<std::size_t>(quiz[0].answer_index)], "Siamese Twin");
  EXPECT_EQ(quiz[2].choices[static_cast<std::size_t>(quiz[2].answer_index)], "CNN or ConvNet");
  EXPECT_EQ(quiz[3].choices[static_cast<std::size_t>(quiz[3].answer_index)], "Triplets");
}

TEST(Quiz, WrongShapeIsRejected) {
  json doc = bundle_doc();
  doc["quiz"].erase(0);
  EXPECT_TRUE(has_issue(validate_bundle(doc), "quiz", "7 questions"));
  doc = bundle_doc();
  doc["quiz"][2]["answer_index"] = 4;
  EXPECT_FALSE(validate_bundle(doc).empty());
}

TEST(Narrative, PackHasAllSlices) {
  const auto pack = load_narrative_pack(default_narrative_pack_path());
  for (const auto id : kSliceIds) {
    ASSERT_TRUE(pack.slices.count(std::string(id))) << id;
    EXPECT_FALSE(pack.slices.at(std::string(id)).narrative.empty());
  }
  json doc = json::parse(R"({"slices": {"snn_concept": {"title": "t", "narrative": "n"}}})");
  EXPECT_THROW(narrative_pack_from_json(doc), DataError);
}

TEST(ParityFixture, CasesRecomputeIndependently) {
  const auto fx = make_parity_fixture();
  EXPECT_EQ(fx, make_parity_fixture());
  ASSERT_EQ(fx["cases"].size(), 20u);
  const double tol = fx["tolerance"].get<double>();
  for (const auto& c : fx["cases"]) {
    const double m = c["margin"].get<double>();
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 5.0);
    EXPECT_NEAR(c["expected_loss"].get<double>(), hinge(c["anchor"], c["positive"], c["negative"], m), tol);
    const double ap = std::hypot(c["anchor"][0].get<double>() - c["positive"][0].get<double>(),
                                 c["anchor"][1].get<double>() - c["positive"][1].get<double>());
    EXPECT_NEAR(c["distance_ap"].get<double>(), ap, tol);
  }
  EXPECT_EQ(fx["cases"][0]["margin"], 0.0);
  EXPECT_EQ(fx["cases"][1]["distance_ap"], 0.0);
  EXPECT_NEAR(fx["cases"][2]["expected_loss"].get<double>(), fx["cases"][2]["margin"].get<double>(), 1e-15);
}
