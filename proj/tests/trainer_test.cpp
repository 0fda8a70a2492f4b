#include <gtest/gtest.h>

#include <set>

#include "embedstory/errors.hpp"
#include "embedstory/trainer.hpp"
#include "support.hpp"

using namespace embedstory;
using Eigen::MatrixXd;

namespace {

void expect_valid(const std::vector<TripletIndex>& batch, const std::vector<int>& labels) {
  for (const auto& t : batch) {
    EXPECT_EQ(labels[static_cast<std::size_t>(t.anchor)], labels[static_cast<std::size_t>(t.positive)]);
    EXPECT_NE(t.anchor, t.positive);
    EXPECT_NE(labels[static_cast<std::size_t>(t.anchor)], labels[static_cast<std::size_t>(t.negative)]);
  }
}

LabeledDataset tiny_dataset() { return generate_synthetic({3, 4, 10, 8.0, 21}); }

}  // namespace

TEST(SampleTriplets, ConstraintsAndCount) {
  const std::vector<int> labels{0, 0, 1, 1};
  SplitMix64 rng(1);
  const auto batch = sample_triplets(labels, 4, Sampling::random, rng);
  EXPECT_EQ(batch.size(), 4u);
  expect_valid(batch, labels);

  const std::vector<int> many{0, 1, 2, 0, 1, 2, 2, 0, 1, 1};
  SplitMix64 big(2);
  const auto lots = sample_triplets(many, 500, Sampling::random, big);
  expect_valid(lots, many);
  std::set<int> anchors;
  for (const auto& t : lots) anchors.insert(t.anchor);
  EXPECT_EQ(anchors.size(), many.size());
}

TEST(SampleTriplets, DeterministicPerSeed) {
  const std::vector<int> labels{0, 0, 0, 1, 1, 2, 2};
  SplitMix64 a(5), b(5);
  EXPECT_EQ(sample_triplets(labels, 30, Sampling::random, a), sample_triplets(labels, 30, Sampling::random, b));
}

TEST(SampleTriplets, Errors) {
  SplitMix64 rng(1);
  const std::vector<int> one_class{0, 0, 0};
  const std::vector<int> singleton{0, 0, 1};
  EXPECT_THROW(sample_triplets(one_class, 1, Sampling::random, rng), DataError);
  EXPECT_THROW(sample_triplets(singleton, 1, Sampling::random, rng), DataError);
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_THROW(sample_triplets(labels, 1, Sampling::semi_hard, rng), ShapeError);
}

TEST(SampleTriplets, SemiHardFallsBackToRandomStream) {
  // Classes 1000 apart with margin 1: no negative is ever inside the window.
  const std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2};
  MatrixXd emb(8, 2);
  for (int i = 0; i < 8; ++i) emb.row(i) << 1000.0 * labels[static_cast<std::size_t>(i)], 0.1 * i;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) continue;
      for (int p = 0; p < 8; ++p) {
        if (p == i || labels[static_cast<std::size_t>(p)] != labels[static_cast<std::size_t>(i)]) continue;
        const double ap = (emb.row(i) - emb.row(p)).squaredNorm();
        const double an = (emb.row(i) - emb.row(j)).squaredNorm();
        ASSERT_FALSE(ap < an && an < ap + 1.0);
      }
    }
  }
  SplitMix64 a(9), b(9);
  EXPECT_EQ(sample_triplets(labels, 40, Sampling::semi_hard, a, &emb, 1.0),
            sample_triplets(labels, 40, Sampling::random, b));
}

TEST(SampleTriplets, SemiHardPicksFromTheWindow) {
  const std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2, 2};
  SplitMix64 init(4);
  MatrixXd emb(9, 3);
  for (auto& v : emb.reshaped()) v = init.normal();
  SplitMix64 rng(7);
  const double margin = 2.0;
  int inside = 0;
  for (const auto& t : sample_triplets(labels, 200, Sampling::semi_hard, rng, &emb, margin)) {
    const double ap = (emb.row(t.anchor) - emb.row(t.positive)).squaredNorm();
    bool window_exists = false;
    for (int n = 0; n < 9; ++n) {
      if (labels[static_cast<std::size_t>(n)] == labels[static_cast<std::size_t>(t.anchor)]) continue;
      const double an = (emb.row(t.anchor) - emb.row(n)).squaredNorm();
      window_exists = window_exists || (ap < an && an < ap + margin);
    }
    if (!window_exists) continue;
    const double an = (emb.row(t.anchor) - emb.row(t.negative)).squaredNorm();
    EXPECT_TRUE(ap < an && an < ap + margin);
    ++inside;
  }
  EXPECT_GT(inside, 20);
}

TEST(HyperParams, Validation) {
  HyperParams hp;
  EXPECT_NO_THROW(hp.validate());
  hp.epochs = -1;
  EXPECT_THROW(hp.validate(), DataError);
  hp = {};
  hp.batch_triplets = 0;
  EXPECT_THROW(hp.validate(), DataError);
  hp = {};
  hp.learning_rate = 0.0;
  EXPECT_THROW(hp.validate(), DataError);
  hp = {};
  hp.margin = -1.0;
  EXPECT_THROW(hp.validate(), DataError);
}

TEST(Train, ZeroEpochsKeepsTheNetwork) {
  const LabeledDataset data = tiny_dataset();
  const EmbeddingNet net = init_network(NetArchitecture::desk_default(), {10, 10, 3}, 1);
  HyperParams hp;
  hp.epochs = 0;
  const TrainingRun run = train(net, data, hp);
  ASSERT_EQ(run.snapshots.size(), 1u);
  EXPECT_EQ(run.snapshots[0].epoch, 0);
  EXPECT_EQ(run.final_net.parameters.flatten(), net.parameters.flatten());
  EXPECT_EQ(run.snapshots[0].embeddings, embed(net, data.items));
}

TEST(Train, SnapshotsAndDeterminism) {
  const LabeledDataset data = tiny_dataset();
  HyperParams hp;
  hp.epochs = 6;
  hp.batch_triplets = 8;
  const TrainingRun a = train_from_scratch(data, hp);
  const TrainingRun b = train_from_scratch(data, hp);
  EXPECT_EQ(a.loss_curve(), b.loss_curve());
  ASSERT_EQ(a.snapshots.size(), 7u);
  for (std::size_t e = 0; e < a.snapshots.size(); ++e) {
    EXPECT_EQ(a.snapshots[e].epoch, static_cast<int>(e));
    EXPECT_EQ(a.snapshots[e].embeddings.rows(), static_cast<Eigen::Index>(data.items.size()));
    EXPECT_GE(a.snapshots[e].mean_loss, 0.0);
  }
  EXPECT_EQ(a.dataset_fingerprint, dataset_fingerprint(data));
  EXPECT_EQ(a.snapshots.back().embeddings, embed(a.final_net, data.items));
  const auto& first = a.batches.front().front();
  EXPECT_EQ(a.first_triplet[0], data.items[static_cast<std::size_t>(first.anchor)].id);
  EXPECT_EQ(a.first_triplet[2], data.items[static_cast<std::size_t>(first.negative)].id);
}

TEST(Train, LossCurveMatchesOfflineRecomputation) {
  // Snapshot e-1 holds the embeddings under the parameters epoch e starts from.
  const LabeledDataset data = tiny_dataset();
  HyperParams hp;
  hp.epochs = 5;
  hp.batch_triplets = 10;
  const TrainingRun run = train_from_scratch(data, hp);
  for (int e = 1; e <= hp.epochs; ++e) {
    const MatrixXd& before = run.snapshots[static_cast<std::size_t>(e - 1)].embeddings;
    double total = 0.0;
    for (const auto& t : run.batches[static_cast<std::size_t>(e - 1)]) {
      const double ap = (before.row(t.anchor) - before.row(t.positive)).squaredNorm();
      const double an = (before.row(t.anchor) - before.row(t.negative)).squaredNorm();
      total += std::max(0.0, ap - an + hp.margin);
    }
    const double expected = total / hp.batch_triplets;
    EXPECT_NEAR(run.snapshots[static_cast<std::size_t>(e)].mean_loss, expected, 1e-12 * std::max(1.0, expected));
  }
  EXPECT_EQ(run.snapshots[0].mean_loss, run.snapshots[1].mean_loss);
}

TEST(Train, InactiveHingeLeavesParametersUnchanged) {
  // A zero network embeds everything at the origin: with margin 0 the hinge is
  // exactly 0 for every triplet, so every step is zero.
  const LabeledDataset data = tiny_dataset();
  EmbeddingNet net = init_network(NetArchitecture::desk_default(), {10, 10, 3}, 1);
  net.parameters = net.parameters.zeros_like();
  HyperParams hp;
  hp.epochs = 3;
  hp.margin = 0.0;
  const TrainingRun run = train(net, data, hp);
  EXPECT_EQ(run.final_net.parameters.flatten(), net.parameters.flatten());
  for (double l : run.loss_curve()) EXPECT_EQ(l, 0.0);
}

TEST(Train, ContrastiveRunsAndDescends) {
  const LabeledDataset data = tiny_dataset();
  HyperParams hp;
  hp.loss_kind = LossKind::contrastive;
  hp.epochs = 20;
  hp.batch_triplets = 16;
  const TrainingRun run = train_from_scratch(data, hp);
  EXPECT_LT(run.snapshots.back().mean_loss, run.snapshots[1].mean_loss);
}

TEST(Retrieval, ClassPointsGivePerfectAccuracy) {
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  MatrixXd emb(6, 2);
  for (int i = 0; i < 6; ++i) emb.row(i) << labels[static_cast<std::size_t>(i)] * 5.0, 0.0;
  EXPECT_EQ(retrieval_accuracy(emb, labels), 1.0);
}

TEST(Retrieval, AllEqualEmbeddingsFollowFirstIndexTieBreak) {
  const std::vector<int> labels{1, 0, 1, 1, 0, 0, 1};
  const MatrixXd emb = MatrixXd::Constant(7, 3, 0.25);
  // Brute force: strict "<" over ascending j keeps the first tied index.
  int hits = 0;
  for (int i = 0; i < 7; ++i) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < 7; ++j) {
      if (j == i) continue;
      const double d = (emb.row(i) - emb.row(j)).norm();
      if (d < best_d) best_d = d, best = j;
    }
    hits += labels[static_cast<std::size_t>(best)] == labels[static_cast<std::size_t>(i)];
  }
  EXPECT_EQ(retrieval_accuracy(emb, labels), hits / 7.0);
  EXPECT_EQ(hits, 3);  // rows 2, 3, 6 match row 0; row 0 matches row 1 (no)
  EXPECT_THROW(retrieval_accuracy(MatrixXd::Zero(1, 2), std::vector<int>{0}), DataError);
}

TEST(TrainingRunJson, RoundTrip) {
  const LabeledDataset data = tiny_dataset();
  HyperParams hp;
  hp.epochs = 2;
  hp.sampling = Sampling::semi_hard;
  const TrainingRun run = train_from_scratch(data, hp);
  const auto doc = run_to_json(run);
  for (const char* key : {"format_version", "hyperparams", "dataset_fingerprint", "loss_curve", "snapshots", "final_net"}) {
    EXPECT_TRUE(doc.contains(key)) << key;
  }
  const TrainingRun back = run_from_json(nlohmann::json::parse(doc.dump()));
  EXPECT_EQ(back.hyperparams, run.hyperparams);
  EXPECT_EQ(back.loss_curve(), run.loss_curve());
  EXPECT_EQ(back.first_triplet, run.first_triplet);
  EXPECT_EQ(back.final_net.parameters.flatten(), run.final_net.parameters.flatten());
  for (std::size_t e = 0; e < run.snapshots.size(); ++e) EXPECT_EQ(back.snapshots[e].embeddings, run.snapshots[e].embeddings);
  EXPECT_EQ(run_to_json(back).dump(), doc.dump());
}
