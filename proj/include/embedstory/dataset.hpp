#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace embedstory {

/// Raster image with a class label. Pixels are row-major, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
  std::string id;
  std::string label;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Throws DataError if the pixel payload disagrees with the dimensions.
void check_image(const Image& img);

struct LabeledDataset {
  std::vector<Image> items;
  std::vector<std::string> classes;
  std::map<std::string, std::string> class_colors;  // class -> "#rrggbb"

  /// Class index of every item, in item order.
  std::vector<int> label_indices() const;
  bool operator==(const LabeledDataset&) const = default;
};

/// Unique ids, known labels, >= 2 items per class, >= 1 class. Throws DataError.
void validate_dataset(const LabeledDataset& data);

struct SyntheticConfig {
  int num_classes = 4;
  int per_class = 25;
  int image_size = 16;
  double noise_sigma = 12.0;
  std::uint64_t seed = 42;
};

/// Decodes binary P6 (RGB) or P5 (gray) with maxval 255. Throws FormatError.
Image read_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_ppm(const Image& img);

Image read_ppm_file(const std::filesystem::path& path);
void write_ppm_file(const Image& img, const std::filesystem::path& path);

/// Per-class base color + stripe prototype plus seeded Gaussian pixel noise.
/// Ids are "<class>/<NNN>"; class_colors hold the prototype base colors.
LabeledDataset generate_synthetic(const SyntheticConfig& config);

/// Prototype base color of class k (RGB), as used by generate_synthetic.
std::array<int, 3> synthetic_prototype(int k);

/// With root/manifest.json: classes, colors, ids and item order come from the
/// manifest, and a recorded fingerprint that no longer matches the files is a
/// DataError. Without one: reads root/<class>/<name>.{ppm,pgm} sorted by
/// (label, filename), ids "<class>/<stem>", class colors the mean image colors.
LabeledDataset load_directory(const std::filesystem::path& root);

/// Writes root/<class>/<stem>.ppm for every item plus root/manifest.json.
void write_directory(const LabeledDataset& data, const std::filesystem::path& root);

/// Canonical text listing of the dataset (one line per item) that the
/// fingerprint is computed over.
std::string dataset_manifest_text(const LabeledDataset& data);

/// FNV-1a 64 of dataset_manifest_text, formatted as "fnv1a64:<hex>".
std::string dataset_fingerprint(const LabeledDataset& data);

std::string hex_color(int r, int g, int b);

}  // namespace embedstory
