#include "support.hpp"

#include <unistd.h>

namespace embedstory::fixtures {

namespace {

Pipeline run_pipeline(const SyntheticConfig& synth, const HyperParams& hp, const TsneConfig& tsne) {
  Pipeline p;
  p.data = generate_synthetic(synth);
  p.run = train_from_scratch(p.data, hp);
  p.tsne = tsne;
  p.frames = project_run(p.run, tsne);
  SyntheticConfig other = synth;
  other.seed = synth.seed + 1000;
  other.per_class = 2;
  p.query = generate_synthetic(other).items.front();
  p.query.id = "query/" + p.query.id;
  p.inference = build_inference(p.run.final_net, p.data, p.frames, p.query, 5);
  p.bundle = bundle_via_json(p);
  p.bundle_text = serialize_bundle(p.bundle);
  return p;
}

}  // namespace

Pipeline small_pipeline(std::uint64_t seed) {
  SyntheticConfig synth;
  synth.num_classes = 3;
  synth.per_class = 6;
  synth.image_size = 10;
  synth.seed = seed;
  HyperParams hp;
  hp.epochs = 5;
  hp.batch_triplets = 12;
  TsneConfig tsne;
  tsne.perplexity = 5;
  tsne.iterations = 120;
  tsne.exaggeration_iters = 40;
  tsne.momentum_switch_iter = 60;
  return run_pipeline(synth, hp, tsne);
}

Pipeline desk_pipeline() { return run_pipeline(SyntheticConfig{}, HyperParams{}, TsneConfig{}); }

StoryBundle bundle_via_json(const Pipeline& p) {
  const std::string fp = dataset_fingerprint(p.data);
  const TrainingRun run = run_from_json(nlohmann::json::parse(run_to_json(p.run).dump()));
  const FramesFile frames = frames_from_json(nlohmann::json::parse(frames_to_json(p.frames, p.tsne, fp).dump()));
  const InferenceFile inference = inference_from_json(nlohmann::json::parse(inference_to_json(p.inference, fp).dump()));
  return build_bundle(run, frames, inference, p.data, load_narrative_pack(default_narrative_pack_path()));
}

std::vector<Image> random_images(const InputShape& shape, int count, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Image> out;
  for (int i = 0; i < count; ++i) {
    Image img{shape.width, shape.height, shape.channels, {}, "img/" + std::to_string(i), "a"};
    img.pixels.resize(static_cast<std::size_t>(shape.width * shape.height * shape.channels));
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    out.push_back(std::move(img));
  }
  return out;
}

NetGradientReport network_gradient_check(const EmbeddingNet& net, std::span<const Image> batch,
                                         const Eigen::MatrixXd& upstream, double h) {
  const ForwardResult base = forward(net, batch);
  const auto signature = base.cache.activation_signature();
  const Eigen::VectorXd analytic = backward(net, base.cache, upstream).flatten();
  const Eigen::VectorXd theta = net.parameters.flatten();

  auto objective = [&](const Eigen::VectorXd& params, bool& same_region) {
    EmbeddingNet probe = net;
    probe.parameters = net.parameters.unflatten(params);
    const ForwardResult r = forward(probe, batch);
    same_region = same_region && r.cache.activation_signature() == signature;
    return (upstream.array() * r.embeddings.array()).sum();
  };

  NetGradientReport report;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd plus = theta, minus = theta;
    plus(i) += h;
    minus(i) -= h;
    bool same = true;
    const double numeric = (objective(plus, same) - objective(minus, same)) / (2.0 * h);
    if (!same) {
      ++report.skipped;
      continue;
    }
    ++report.checked;
    report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic(i), numeric));
  }
  return report;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("embedstory_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace embedstory::fixtures
