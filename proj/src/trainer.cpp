#include "embedstory/trainer.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "embedstory/errors.hpp"

namespace embedstory {

using Eigen::Index;
using Eigen::MatrixXd;

void HyperParams::validate() const {
  if (epochs < 0) throw DataError("epochs must be >= 0");
  if (batch_triplets < 1) throw DataError("batch_triplets must be >= 1");
  if (!(learning_rate > 0.0)) throw DataError("learning_rate must be > 0");
  Margin{margin};
}

std::vector<TripletIndex> sample_triplets(std::span<const int> labels, int count, Sampling strategy, SplitMix64& rng,
                                          const MatrixXd* embeddings, double margin) {
  std::map<int, std::vector<int>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(static_cast<int>(i));
  if (members.size() < 2) throw DataError("triplet sampling needs >= 2 classes");
  for (const auto& [label, rows] : members) {
    if (rows.size() < 2) throw DataError("class " + std::to_string(label) + " has 1 member; triplets need >= 2");
  }
  if (strategy == Sampling::semi_hard &&
      (embeddings == nullptr || embeddings->rows() != static_cast<Index>(labels.size()))) {
    throw ShapeError("semi-hard sampling needs one embedding row per label");
  }

  std::vector<TripletIndex> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  std::vector<int> window;
  for (int t = 0; t < count; ++t) {
    const int a = static_cast<int>(rng.below(labels.size()));
    const auto& same = members[labels[static_cast<std::size_t>(a)]];
    // Positive among the anchor's classmates, skipping the anchor itself.
    int p = same[rng.below(same.size() - 1)];
    if (p == a) p = same.back();

    const std::size_t others = labels.size() - same.size();
    window.clear();
    if (strategy == Sampling::semi_hard) {
      const double ap = (embeddings->row(a) - embeddings->row(p)).squaredNorm();
      for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n] == labels[static_cast<std::size_t>(a)]) continue;
        const double an = (embeddings->row(a) - embeddings->row(static_cast<Index>(n))).squaredNorm();
        if (ap < an && an < ap + margin) window.push_back(static_cast<int>(n));
      }
    }
    int n = 0;
    if (!window.empty()) {
      n = window[rng.below(window.size())];
    } else {
      // The r-th row (in index order) whose label differs from the anchor's.
      std::uint64_t r = rng.below(others);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == labels[static_cast<std::size_t>(a)]) continue;
        if (r-- == 0) {
          n = static_cast<int>(i);
          break;
        }
      }
    }
    out.push_back({a, p, n});
  }
  return out;
}

std::vector<double> TrainingRun::loss_curve() const {
  std::vector<double> curve;
  curve.reserve(snapshots.size());
  for (const auto& s : snapshots) curve.push_back(s.mean_loss);
  return curve;
}

BatchLoss batch_loss(const MatrixXd& embeddings, std::span<const TripletIndex> batch, LossKind kind, double margin) {
  const Margin m(margin);
  BatchLoss result;
  result.upstream = MatrixXd::Zero(embeddings.rows(), embeddings.cols());
  if (batch.empty()) return result;
  double total = 0.0;
  if (kind == LossKind::triplet) {
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& t : batch) {
      const auto r = triplet_loss(Triplet{embeddings.row(t.anchor).transpose(), embeddings.row(t.positive).transpose(),
                                          embeddings.row(t.negative).transpose()},
                                  m);
      total += r.loss;
      result.upstream.row(t.anchor) += scale * r.d_anchor.transpose();
      result.upstream.row(t.positive) += scale * r.d_positive.transpose();
      result.upstream.row(t.negative) += scale * r.d_negative.transpose();
    }
    result.mean_loss = total * scale;
  } else {
    // Each triplet contributes a similar (a, p) and a dissimilar (a, n) pair.
    const double scale = 1.0 / (2.0 * static_cast<double>(batch.size()));
    for (const auto& t : batch) {
      for (const auto& [other, similar] : {std::pair{t.positive, true}, std::pair{t.negative, false}}) {
        const auto r = contrastive_loss(
            LabeledPair{embeddings.row(t.anchor).transpose(), embeddings.row(other).transpose(), similar}, m);
        total += r.loss;
        result.upstream.row(t.anchor) += scale * r.d_a.transpose();
        result.upstream.row(other) += scale * r.d_b.transpose();
      }
    }
    result.mean_loss = total * scale;
  }
  return result;
}

namespace {

// Rows of the dataset touched by a batch, in ascending order.
std::vector<int> batch_rows(std::span<const TripletIndex> batch) {
  std::vector<int> rows;
  for (const auto& t : batch) rows.insert(rows.end(), {t.anchor, t.positive, t.negative});
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

}  // namespace

TrainingRun train(const EmbeddingNet& net, const LabeledDataset& data, const HyperParams& hp) {
  hp.validate();
  validate_dataset(data);
  const std::vector<int> labels = data.label_indices();
  SplitMix64 rng(hp.seed);

  TrainingRun run;
  run.dataset_fingerprint = dataset_fingerprint(data);
  run.hyperparams = hp;
  run.final_net = net;
  MatrixXd current = embed(net, data.items);

  auto step = [&](bool apply) {
    auto batch = sample_triplets(labels, hp.batch_triplets, hp.sampling, rng, &current, hp.margin);
    const std::vector<int> rows = batch_rows(batch);
    std::vector<Image> images;
    images.reserve(rows.size());
    std::vector<int> local(data.items.size(), -1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      local[static_cast<std::size_t>(rows[i])] = static_cast<int>(i);
      images.push_back(data.items[static_cast<std::size_t>(rows[i])]);
    }
    std::vector<TripletIndex> local_batch;
    local_batch.reserve(batch.size());
    for (const auto& t : batch) {
      local_batch.push_back({local[static_cast<std::size_t>(t.anchor)], local[static_cast<std::size_t>(t.positive)],
                             local[static_cast<std::size_t>(t.negative)]});
    }
    const ForwardResult fwd = forward(run.final_net, images);
    const BatchLoss loss = batch_loss(fwd.embeddings, local_batch, hp.loss_kind, hp.margin);
    if (apply) {
      const GradientSet grads = backward(run.final_net, fwd.cache, loss.upstream);
      run.final_net = apply_gradients(run.final_net, grads, hp.learning_rate);
    }
    run.batches.push_back(std::move(batch));
    return loss.mean_loss;
  };

  if (hp.epochs == 0) {
    const double loss = step(false);
    run.snapshots.push_back({0, current, loss});
  } else {
    run.snapshots.push_back({0, current, 0.0});
    for (int e = 1; e <= hp.epochs; ++e) {
      const double loss = step(true);
      if (e == 1) run.snapshots[0].mean_loss = loss;
      current = embed(run.final_net, data.items);
      run.snapshots.push_back({e, current, loss});
    }
  }
  const TripletIndex& first = run.batches.front().front();
  run.first_triplet = {data.items[static_cast<std::size_t>(first.anchor)].id,
                       data.items[static_cast<std::size_t>(first.positive)].id,
                       data.items[static_cast<std::size_t>(first.negative)].id};
  return run;
}

TrainingRun train_from_scratch(const LabeledDataset& data, const HyperParams& hp) {
  validate_dataset(data);
  const Image& first = data.items.front();
  const InputShape input{first.height, first.width, first.channels};
  return train(init_network(NetArchitecture::desk_default(), input, derive_seed(hp.seed, 1)), data, hp);
}

double retrieval_accuracy(const MatrixXd& embeddings, std::span<const int> labels) {
  const Index n = embeddings.rows();
  if (n < 2) throw DataError("retrieval needs >= 2 items");
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("labels and embeddings disagree in length");
  int hits = 0;
  for (Index i = 0; i < n; ++i) {
    Index best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (embeddings.row(i) - embeddings.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    hits += labels[static_cast<std::size_t>(best)] == labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double evaluate_retrieval(const EmbeddingNet& net, const LabeledDataset& data) {
  if (data.items.size() < 2) throw DataError("retrieval needs >= 2 items");
  const auto labels = data.label_indices();
  return retrieval_accuracy(embed(net, data.items), labels);
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::ordered_json hyperparams_to_json(const HyperParams& hp) {
  return {{"epochs", hp.epochs},
          {"batch_triplets", hp.batch_triplets},
          {"learning_rate", hp.learning_rate},
          {"margin", hp.margin},
          {"loss_kind", hp.loss_kind == LossKind::triplet ? "triplet" : "contrastive"},
          {"sampling", hp.sampling == Sampling::random ? "random" : "semi_hard"},
          {"seed", hp.seed}};
}

HyperParams hyperparams_from_json(const nlohmann::json& doc) {
  HyperParams hp;
  hp.epochs = doc.at("epochs").get<int>();
  hp.batch_triplets = doc.at("batch_triplets").get<int>();
  hp.learning_rate = doc.at("learning_rate").get<double>();
  hp.margin = doc.at("margin").get<double>();
  const auto kind = doc.at("loss_kind").get<std::string>();
  if (kind != "triplet" && kind != "contrastive") throw DataError("unknown loss_kind '" + kind + "'");
  hp.loss_kind = kind == "triplet" ? LossKind::triplet : LossKind::contrastive;
  const auto sampling = doc.at("sampling").get<std::string>();
  if (sampling != "random" && sampling != "semi_hard") throw DataError("unknown sampling '" + sampling + "'");
  hp.sampling = sampling == "random" ? Sampling::random : Sampling::semi_hard;
  hp.seed = doc.at("seed").get<std::uint64_t>();
  return hp;
}

nlohmann::ordered_json matrix_to_json(const MatrixXd& m) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const nlohmann::json& doc, Index cols) {
  if (!doc.is_array()) throw DataError("matrix must be an array of rows");
  const Index rows = static_cast<Index>(doc.size());
  if (cols < 0) cols = rows == 0 ? 0 : static_cast<Index>(doc.at(0).size());
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = doc[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) throw DataError("matrix rows have unequal length");
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

nlohmann::ordered_json run_to_json(const TrainingRun& run) {
  nlohmann::ordered_json doc;
  doc["format_version"] = 1;
  doc["hyperparams"] = hyperparams_to_json(run.hyperparams);
  doc["dataset_fingerprint"] = run.dataset_fingerprint;
  doc["first_triplet"] = {{"anchor", run.first_triplet[0]},
                          {"positive", run.first_triplet[1]},
                          {"negative", run.first_triplet[2]}};
  doc["loss_curve"] = run.loss_curve();
  nlohmann::ordered_json snaps = nlohmann::ordered_json::array();
  for (const auto& s : run.snapshots) {
    snaps.push_back({{"epoch", s.epoch}, {"mean_loss", s.mean_loss}, {"embeddings", matrix_to_json(s.embeddings)}});
  }
  doc["snapshots"] = std::move(snaps);
  doc["final_net"] = checkpoint_to_json(run.final_net);
  return doc;
}

TrainingRun run_from_json(const nlohmann::json& doc) {
  if (doc.at("format_version").get<int>() != 1) throw DataError("training run: unsupported format_version");
  TrainingRun run;
  run.hyperparams = hyperparams_from_json(doc.at("hyperparams"));
  run.dataset_fingerprint = doc.at("dataset_fingerprint").get<std::string>();
  const auto& first = doc.at("first_triplet");
  run.first_triplet = {first.at("anchor").get<std::string>(), first.at("positive").get<std::string>(),
                       first.at("negative").get<std::string>()};
  for (const auto& s : doc.at("snapshots")) {
    run.snapshots.push_back(
        {s.at("epoch").get<int>(), matrix_from_json(s.at("embeddings")), s.at("mean_loss").get<double>()});
  }
  if (run.snapshots.empty() || run.snapshots.front().epoch != 0) {
    throw DataError("training run: snapshots must start at epoch 0");
  }
  for (std::size_t i = 1; i < run.snapshots.size(); ++i) {
    if (run.snapshots[i].epoch <= run.snapshots[i - 1].epoch) throw DataError("training run: epochs not increasing");
  }
  run.final_net = checkpoint_from_json(doc.at("final_net"));
  return run;
}

}  // namespace embedstory
