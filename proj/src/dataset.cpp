#include "embedstory/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>

#include <json.hpp>

#include "embedstory/base64.hpp"
#include "embedstory/errors.hpp"
#include "embedstory/rng.hpp"

namespace embedstory {

namespace fs = std::filesystem;

void check_image(const Image& img) {
  if (img.width < 1 || img.height < 1) throw DataError("image '" + img.id + "': width and height must be >= 1");
  if (img.channels != 1 && img.channels != 3) throw DataError("image '" + img.id + "': channels must be 1 or 3");
  const auto expected = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (img.pixels.size() != expected) {
    throw DataError("image '" + img.id + "': pixel count " + std::to_string(img.pixels.size()) +
                    " != " + std::to_string(expected));
  }
}

std::vector<int> LabeledDataset::label_indices() const {
  std::map<std::string, int> index;
  for (std::size_t k = 0; k < classes.size(); ++k) index[classes[k]] = static_cast<int>(k);
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    const auto it = index.find(item.label);
    if (it == index.end()) throw DataError("item '" + item.id + "' has unknown label '" + item.label + "'");
    out.push_back(it->second);
  }
  return out;
}

void validate_dataset(const LabeledDataset& data) {
  if (data.classes.empty()) throw DataError("dataset has no classes");
  std::set<std::string> class_set(data.classes.begin(), data.classes.end());
  if (class_set.size() != data.classes.size()) throw DataError("duplicate class names");
  std::set<std::string> ids;
  std::map<std::string, int> counts;
  for (const auto& item : data.items) {
    check_image(item);
    if (!ids.insert(item.id).second) throw DataError("duplicate image id '" + item.id + "'");
    if (!class_set.count(item.label)) throw DataError("item '" + item.id + "' has unknown label '" + item.label + "'");
    ++counts[item.label];
  }
  for (const auto& c : data.classes) {
    if (counts[c] < 2) throw DataError("class '" + c + "' needs >= 2 items (has " + std::to_string(counts[c]) + ")");
  }
}

// ---------------------------------------------------------------------------
// PPM / PGM

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  int read_uint(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw FormatError(std::string(what) + " too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      if (pos_ >= bytes_.size()) throw FormatError(std::string("truncated header: missing ") + what, pos_);
      throw FormatError(std::string("expected ") + what, pos_);
    }
    return static_cast<int>(value);
  }

  std::size_t pos_ = 0;

 private:
  std::span<const std::uint8_t> bytes_;
};

}  // namespace

Image read_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2) throw FormatError("truncated header: missing magic number", bytes.size());
  if (bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) throw FormatError("unsupported magic", 0);
  Image img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader reader(bytes);
  reader.pos_ = 2;
  if (reader.pos_ < bytes.size() && !is_space(bytes[reader.pos_]) && bytes[reader.pos_] != '#') {
    throw FormatError("unsupported magic", 0);
  }
  img.width = reader.read_uint("width");
  img.height = reader.read_uint("height");
  reader.skip_space_and_comments();
  const std::size_t maxval_at = reader.pos_;
  const int maxval = reader.read_uint("maxval");
  if (img.width < 1 || img.height < 1) throw FormatError("width and height must be >= 1", maxval_at);
  if (maxval != 255) throw FormatError("maxval must be 255, got " + std::to_string(maxval), maxval_at);
  if (reader.pos_ >= bytes.size() || !is_space(bytes[reader.pos_])) {
    throw FormatError("expected single whitespace after maxval", reader.pos_);
  }
  const std::size_t data_at = reader.pos_ + 1;
  const auto need = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (bytes.size() - data_at < need) {
    throw FormatError("truncated pixel payload: need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - data_at),
                      bytes.size());
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_at),
                    bytes.begin() + static_cast<std::ptrdiff_t>(data_at + need));
  return img;
}

std::vector<std::uint8_t> write_ppm(const Image& img) {
  check_image(img);
  const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(img.width) +
                             " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

Image read_ppm_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return read_ppm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_ppm_file(const Image& img, const fs::path& path) {
  const auto bytes = write_ppm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

struct ClassPrototype {
  const char* name;
  std::array<int, 3> rgb;
};

// Channel values stay inside [72, 184] so stripes and noise rarely clip.
constexpr std::array<ClassPrototype, 8> kPrototypes{{
    {"ginger", {184, 112, 72}},
    {"gray", {128, 128, 128}},
    {"cream", {184, 168, 136}},
    {"smoke", {88, 96, 112}},
    {"brown", {128, 92, 72}},
    {"lilac", {160, 136, 168}},
    {"fawn", {176, 144, 104}},
    {"sable", {104, 80, 80}},
}};

constexpr double kStripeAmplitude = 24.0;

std::string class_name(int k) {
  if (k < static_cast<int>(kPrototypes.size())) return kPrototypes[k].name;
  return "class_" + std::to_string(k);
}

int stripe_frequency(int k, int size) {
  const int span = std::max(1, size / 2 - 1);
  return 1 + (k % span);
}

}  // namespace

std::array<int, 3> synthetic_prototype(int k) {
  if (k < static_cast<int>(kPrototypes.size())) return kPrototypes[k].rgb;
  // Deterministic spread for extra classes.
  SplitMix64 rng(derive_seed(0x5eed, static_cast<std::uint64_t>(k)));
  return {72 + static_cast<int>(rng.below(113)), 72 + static_cast<int>(rng.below(113)),
          72 + static_cast<int>(rng.below(113))};
}

std::string hex_color(int r, int g, int b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r & 255, g & 255, b & 255);
  return buf;
}

LabeledDataset generate_synthetic(const SyntheticConfig& config) {
  if (config.num_classes < 2) throw DataError("num_classes must be >= 2");
  if (config.per_class < 2) throw DataError("per_class must be >= 2");
  if (config.image_size < 4) throw DataError("image_size must be >= 4");
  if (config.noise_sigma < 0) throw DataError("noise_sigma must be >= 0");

  LabeledDataset data;
  SplitMix64 rng(config.seed);
  const int size = config.image_size;
  for (int k = 0; k < config.num_classes; ++k) {
    const std::string name = class_name(k);
    const auto proto = synthetic_prototype(k);
    data.classes.push_back(name);
    data.class_colors[name] = hex_color(proto[0], proto[1], proto[2]);
    const int freq = stripe_frequency(k, size);
    const bool vertical = k % 2 == 0;
    for (int i = 0; i < config.per_class; ++i) {
      Image img;
      img.width = img.height = size;
      img.channels = 3;
      img.label = name;
      char suffix[16];
      std::snprintf(suffix, sizeof suffix, "%03d", i);
      img.id = name + "/" + suffix;
      img.pixels.resize(static_cast<std::size_t>(size) * size * 3);
      const double phase = 2.0 * std::numbers::pi * rng.uniform();
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const int coord = vertical ? x : y;
          const double stripe =
              kStripeAmplitude * std::cos(2.0 * std::numbers::pi * freq * coord / size + phase);
          for (int c = 0; c < 3; ++c) {
            const double v = proto[c] + stripe + config.noise_sigma * rng.normal();
            img.pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c] =
                static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
          }
        }
      }
      data.items.push_back(std::move(img));
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Directory layout

namespace {

LabeledDataset load_with_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  LabeledDataset data;
  std::string recorded;
  try {
    const auto doc = nlohmann::json::parse(in);
    data.classes = doc.at("classes").get<std::vector<std::string>>();
    for (const auto& c : data.classes) data.class_colors[c] = doc.at("class_colors").at(c).get<std::string>();
    for (const auto& item : doc.at("items")) {
      Image img = read_ppm_file(root / item.at("file").get<std::string>());
      img.id = item.at("id").get<std::string>();
      img.label = item.at("label").get<std::string>();
      data.items.push_back(std::move(img));
    }
    recorded = doc.value("dataset_fingerprint", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
  validate_dataset(data);
  if (!recorded.empty() && recorded != dataset_fingerprint(data)) {
    throw DataError("'" + path.string() + "' records fingerprint " + recorded + " but the files give " +
                    dataset_fingerprint(data));
  }
  return data;
}

}  // namespace

LabeledDataset load_directory(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' is not a directory");
  if (fs::exists(root / "manifest.json")) return load_with_manifest(root);
  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("dataset root '" + root.string() + "' is empty");

  LabeledDataset data;
  for (const auto& label : class_dirs) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(root / label)) {
      const auto ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(entry.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2) {
      throw DataError("class '" + label + "' needs >= 2 items (has " + std::to_string(files.size()) + ")");
    }
    data.classes.push_back(label);
    std::array<double, 3> sum{};
    std::size_t count = 0;
    for (const auto& file : files) {
      Image img = read_ppm_file(root / label / file);
      img.label = label;
      img.id = label + "/" + fs::path(file).stem().string();
      for (std::size_t p = 0; p < img.pixels.size(); p += img.channels) {
        for (int c = 0; c < 3; ++c) sum[c] += img.pixels[p + (img.channels == 3 ? c : 0)];
        ++count;
      }
      data.items.push_back(std::move(img));
    }
    data.class_colors[label] = hex_color(static_cast<int>(std::lround(sum[0] / count)),
                                         static_cast<int>(std::lround(sum[1] / count)),
                                         static_cast<int>(std::lround(sum[2] / count)));
  }
  validate_dataset(data);
  return data;
}

void write_directory(const LabeledDataset& data, const fs::path& root) {
  validate_dataset(data);
  fs::create_directories(root);
  nlohmann::ordered_json items = nlohmann::ordered_json::array();
  for (const auto& item : data.items) {
    const auto slash = item.id.rfind('/');
    const std::string stem = slash == std::string::npos ? item.id : item.id.substr(slash + 1);
    fs::create_directories(root / item.label);
    const fs::path rel = fs::path(item.label) / (stem + (item.channels == 3 ? ".ppm" : ".pgm"));
    write_ppm_file(item, root / rel);
    items.push_back({{"id", item.id}, {"label", item.label}, {"file", rel.generic_string()}});
  }
  nlohmann::ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["dataset_fingerprint"] = dataset_fingerprint(data);
  manifest["classes"] = data.classes;
  nlohmann::ordered_json colors = nlohmann::ordered_json::object();
  for (const auto& c : data.classes) colors[c] = data.class_colors.at(c);
  manifest["class_colors"] = colors;
  manifest["items"] = items;
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in '" + root.string() + "'");
  out << manifest.dump(2) << '\n';
}

std::string dataset_manifest_text(const LabeledDataset& data) {
  std::string text;
  for (const auto& item : data.items) {
    const std::string_view pixels(reinterpret_cast<const char*>(item.pixels.data()), item.pixels.size());
    char line[64];
    std::snprintf(line, sizeof line, "\t%dx%dx%d\t%016llx\n", item.width, item.height, item.channels,
                  static_cast<unsigned long long>(fnv1a64(pixels)));
    text += item.id + "\t" + item.label + line;
  }
  return text;
}

std::string dataset_fingerprint(const LabeledDataset& data) {
  return format_fingerprint(fnv1a64(dataset_manifest_text(data)));
}

}  // namespace embedstory
