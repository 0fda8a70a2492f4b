#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "embedstory/dataset.hpp"
#include "embedstory/errors.hpp"
#include "embedstory/inference.hpp"
#include "embedstory/projection.hpp"
#include "embedstory/serve.hpp"
#include "embedstory/story_bundle.hpp"
#include "embedstory/study_stats.hpp"
#include "embedstory/trainer.hpp"

namespace embedstory {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& doc) { write_text(path, doc.dump(1) + "\n"); }

// Wraps a json access error with the file it came from.
template <class F>
auto parse_artifact(const fs::path& path, F&& parse) {
  const json doc = read_json(path);
  try {
    return parse(doc);
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

void require_same(const fs::path& a, const std::string& fa, const fs::path& b, const std::string& fb) {
  if (fa != fb) {
    throw DataError("fingerprint mismatch: '" + a.string() + "' has " + fa + " but '" + b.string() + "' has " + fb);
  }
}

struct Paths {
  std::string data, out, run, frames, inference, query, narrative, csv, json_out, bundle, ui_dir, src;
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Metric-learning scrollytelling pipeline", "embedstory"};
  app.require_subcommand(1);
  Paths p;

  auto* dataset = app.add_subcommand("dataset", "Generate or import a labeled image dataset");
  dataset->require_subcommand(1);
  SyntheticConfig synth;
  auto* gen = dataset->add_subcommand("gen", "Write a seeded synthetic dataset");
  gen->add_option("--classes", synth.num_classes, "Number of classes")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--per-class", synth.per_class, "Images per class")->capture_default_str()->check(CLI::Range(2, 100000));
  gen->add_option("--size", synth.image_size, "Image width and height")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--noise", synth.noise_sigma, "Pixel noise sigma")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", p.out, "Output directory")->required();
  auto* import = dataset->add_subcommand("import", "Copy a <class>/<image>.ppm tree into a dataset with a manifest");
  import->add_option("--src", p.src, "Source directory")->required();
  import->add_option("--out", p.out, "Output directory")->required();

  HyperParams hp;
  std::string loss_kind = "triplet";
  std::string sampling = "random";
  auto* train_cmd = app.add_subcommand("train", "Train the embedding network and record epoch snapshots");
  train_cmd->add_option("--data", p.data, "Dataset directory")->required();
  train_cmd->add_option("--out", p.out, "Run file to write")->required();
  train_cmd->add_option("--epochs", hp.epochs)->capture_default_str();
  train_cmd->add_option("--batch", hp.batch_triplets, "Triplets per batch")->capture_default_str();
  train_cmd->add_option("--lr", hp.learning_rate)->capture_default_str();
  train_cmd->add_option("--margin", hp.margin)->capture_default_str();
  train_cmd->add_option("--loss", loss_kind)->capture_default_str()->check(CLI::IsMember({"triplet", "contrastive"}));
  train_cmd->add_option("--sampling", sampling)->capture_default_str()->check(CLI::IsMember({"random", "semi_hard"}));
  train_cmd->add_option("--seed", hp.seed)->capture_default_str();

  TsneConfig tsne;
  auto* project = app.add_subcommand("project", "Project every snapshot to 2D with warm-started t-SNE");
  project->add_option("--run", p.run, "Run file")->required();
  project->add_option("--out", p.out, "Frames file to write")->required();
  project->add_option("--perplexity", tsne.perplexity)->capture_default_str();
  project->add_option("--iterations", tsne.iterations)->capture_default_str();
  project->add_option("--lr", tsne.learning_rate)->capture_default_str();
  project->add_option("--exaggeration", tsne.early_exaggeration)->capture_default_str();
  project->add_option("--exaggeration-iters", tsne.exaggeration_iters)->capture_default_str();
  project->add_option("--seed", tsne.seed)->capture_default_str();

  int k = 5;
  auto* infer = app.add_subcommand("infer", "Embed a query image and rank its nearest neighbors");
  infer->add_option("--run", p.run, "Run file")->required();
  infer->add_option("--frames", p.frames, "Frames file")->required();
  infer->add_option("--data", p.data, "Dataset directory")->required();
  infer->add_option("--query", p.query, "Query image (PPM/PGM)")->required();
  infer->add_option("--k", k)->capture_default_str()->check(CLI::PositiveNumber);
  infer->add_option("--out", p.out, "Inference file to write")->required();

  BundleOptions bundle_options;
  bool no_quiz = false;
  auto* bundle = app.add_subcommand("bundle", "Compile the six-slice story bundle");
  bundle->add_option("--run", p.run)->required();
  bundle->add_option("--frames", p.frames)->required();
  bundle->add_option("--inference", p.inference)->required();
  bundle->add_option("--data", p.data)->required();
  bundle->add_option("--narrative", p.narrative, "Narrative pack (defaults to the bundled one)");
  bundle->add_option("--samples-per-class", bundle_options.samples_per_class)->capture_default_str();
  bundle->add_flag("--no-quiz", no_quiz, "Leave the quiz out");
  bundle->add_option("--out", p.out)->required();

  auto* validate = app.add_subcommand("validate", "Check a bundle and list every issue");
  validate->add_option("--bundle", p.bundle)->required();

  auto* stats = app.add_subcommand("stats", "Descriptives, Levene and t-tests for pre/post study scores");
  stats->add_option("--csv", p.csv, "group,pid,pre,post file (defaults to the embedded study scores)");
  stats->add_option("--json", p.json_out, "Also write the report as JSON");

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve the UI directory plus /bundle.json and /parity.json");
  serve->add_option("--bundle", p.bundle)->required();
  serve->add_option("--ui-dir", p.ui_dir, "Static UI files");
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str()->check(CLI::Range(0, 65535));

  std::uint64_t parity_seed = 2024;
  int parity_count = 20;
  auto* parity = app.add_subcommand("parity", "Write the triplet-loss parity fixture");
  parity->add_option("--out", p.out)->required();
  parity->add_option("--seed", parity_seed)->capture_default_str();
  parity->add_option("--count", parity_count)->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) {
      failing = sub;
      for (auto* nested : sub->get_subcommands()) failing = nested;
    }
    err << failing->help();
    return 2;
  }

  try {
    if (gen->parsed()) {
      const LabeledDataset data = generate_synthetic(synth);
      write_directory(data, p.out);
      out << "wrote " << data.items.size() << " images to " << p.out << "\n" << dataset_fingerprint(data) << "\n";
    } else if (import->parsed()) {
      const LabeledDataset data = load_directory(p.src);
      write_directory(data, p.out);
      out << "imported " << data.items.size() << " images to " << p.out << "\n" << dataset_fingerprint(data) << "\n";
    } else if (train_cmd->parsed()) {
      hp.loss_kind = loss_kind == "triplet" ? LossKind::triplet : LossKind::contrastive;
      hp.sampling = sampling == "random" ? Sampling::random : Sampling::semi_hard;
      const LabeledDataset data = load_directory(p.data);
      const TrainingRun run = train_from_scratch(data, hp);
      write_json(p.out, run_to_json(run));
      const auto curve = run.loss_curve();
      char line[160];
      std::snprintf(line, sizeof line, "loss %.6f -> %.6f over %d epochs, retrieval@1 %.4f\n", curve.front(),
                    curve.back(), hp.epochs, evaluate_retrieval(run.final_net, data));
      out << line;
    } else if (project->parsed()) {
      const TrainingRun run = parse_artifact(p.run, run_from_json);
      const auto frames = project_run(run, tsne);
      write_json(p.out, frames_to_json(frames, tsne, run.dataset_fingerprint));
      char line[160];
      std::snprintf(line, sizeof line, "%zu frames, final KL %.6f\n", frames.size(), frames.back().kl);
      out << line;
    } else if (infer->parsed()) {
      const TrainingRun run = parse_artifact(p.run, run_from_json);
      const FramesFile frames = parse_artifact(p.frames, frames_from_json);
      const LabeledDataset data = load_directory(p.data);
      const std::string fp = dataset_fingerprint(data);
      require_same(p.run, run.dataset_fingerprint, p.data, fp);
      require_same(p.frames, frames.dataset_fingerprint, p.data, fp);
      Image query = read_ppm_file(p.query);
      query.id = "query/" + fs::path(p.query).stem().string();
      const InferenceResult result = build_inference(run.final_net, data, frames.frames, query, k);
      write_json(p.out, inference_to_json(result, fp));
      for (const auto& nb : result.neighbors) {
        char line[200];
        std::snprintf(line, sizeof line, "%-24s %.6f\n", nb.id.c_str(), nb.distance);
        out << line;
      }
    } else if (bundle->parsed()) {
      const TrainingRun run = parse_artifact(p.run, run_from_json);
      const FramesFile frames = parse_artifact(p.frames, frames_from_json);
      const InferenceFile inference = parse_artifact(p.inference, inference_from_json);
      const LabeledDataset data = load_directory(p.data);
      const std::string fp = dataset_fingerprint(data);
      require_same(p.frames, frames.dataset_fingerprint, p.run, run.dataset_fingerprint);
      require_same(p.inference, inference.dataset_fingerprint, p.run, run.dataset_fingerprint);
      require_same(p.run, run.dataset_fingerprint, p.data, fp);
      const NarrativePack narrative =
          load_narrative_pack(p.narrative.empty() ? default_narrative_pack_path() : fs::path(p.narrative));
      bundle_options.include_quiz = !no_quiz;
      const StoryBundle story = build_bundle(run, frames, inference, data, narrative, bundle_options);
      const std::string text = serialize_bundle(story);
      if (const auto issues = validate_bundle_text(text); !issues.empty()) {
        throw DataError("built bundle failed validation at " + issues.front().path + ": " + issues.front().message);
      }
      write_text(p.out, text);
      out << "wrote " << p.out << " (" << text.size() << " bytes, " << story.assets.size() << " assets)\n";
    } else if (validate->parsed()) {
      const auto issues = validate_bundle_text(read_text(p.bundle));
      for (const auto& issue : issues) err << (issue.path.empty() ? "<root>" : issue.path) << ": " << issue.message << "\n";
      if (!issues.empty()) return 1;
      out << p.bundle << ": ok\n";
    } else if (stats->parsed()) {
      const auto groups = p.csv.empty() ? study_scores() : parse_scores_csv(read_text(p.csv));
      const StudyReport report = compute_report(groups);
      out << report_to_text(report);
      if (!p.json_out.empty()) write_json(p.json_out, report_to_json(report));
    } else if (serve->parsed()) {
      StoryServer server(read_text(p.bundle), p.ui_dir.empty() ? fs::path() : fs::path(p.ui_dir));
      const int bound = server.bind(host, port);
      out << "serving on http://" << host << ":" << bound << "/" << std::endl;
      server.serve();
    } else if (parity->parsed()) {
      write_json(p.out, make_parity_fixture(parity_seed, parity_count));
      out << "wrote " << parity_count << " cases to " << p.out << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace embedstory
