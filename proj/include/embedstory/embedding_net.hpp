#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "embedstory/dataset.hpp"

namespace embedstory {

enum class Activation { relu, linear };

/// Valid-padding, stride-1 convolution followed by ReLU and a 2x2/stride-2 max-pool.
struct ConvLayer {
  int out_channels = 0;
  int kernel = 0;
  bool operator==(const ConvLayer&) const = default;
};

struct FcLayer {
  int out_dim = 0;
  Activation activation = Activation::linear;
  bool operator==(const FcLayer&) const = default;
};

struct InputShape {
  int height = 0;
  int width = 0;
  int channels = 0;
  bool operator==(const InputShape&) const = default;
};

struct NetArchitecture {
  std::vector<ConvLayer> conv_layers;
  std::vector<FcLayer> fc_layers;

  /// Output size of the last fc layer.
  int embedding_dim() const;
  bool operator==(const NetArchitecture&) const = default;

  /// conv(8,3) -> pool -> conv(16,3) -> pool -> fc(32, linear).
  static NetArchitecture desk_default();
};

/// Channel count and spatial size of a feature map.
struct FeatureShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  int size() const { return channels * height * width; }
  bool operator==(const FeatureShape&) const = default;
};

/// Shapes after each conv (pre-pool) and each pool, in order, for the given input.
struct ShapeTable {
  std::vector<FeatureShape> conv_out;
  std::vector<FeatureShape> pool_out;
  int flat_dim = 0;  // fc input size
};

/// Throws ShapeError when a spatial size drops below 1 or the last fc layer
/// is not linear.
ShapeTable infer_shapes(const NetArchitecture& arch, const InputShape& input);

struct DenseParams {
  Eigen::MatrixXd weight;  // conv: out x (in*k*k), column = (c*k + ky)*k + kx; fc: out x in
  Eigen::VectorXd bias;
};

/// All trainable parameters. Also used for gradients.
struct ParameterSet {
  std::vector<DenseParams> conv;
  std::vector<DenseParams> fc;

  Eigen::Index size() const;
  /// Concatenation of every weight (column-major) then bias, layer by layer, conv first.
  Eigen::VectorXd flatten() const;
  /// Inverse of flatten, shaped like *this.
  ParameterSet unflatten(const Eigen::VectorXd& flat) const;
  ParameterSet zeros_like() const;
  bool same_shape(const ParameterSet& other) const;
};

using GradientSet = ParameterSet;

/// The shared-weight embedding model. One instance serves every Siamese branch.
struct EmbeddingNet {
  NetArchitecture architecture;
  InputShape input_shape;
  ParameterSet parameters;
};

/// He-normal weights (variance 2/fan_in), zero biases.
EmbeddingNet init_network(const NetArchitecture& arch, const InputShape& input, std::uint64_t seed);

struct ConvCache {
  Eigen::MatrixXd cols;        // (in*k*k) x (Ho*Wo)
  Eigen::MatrixXd pre;         // out x (Ho*Wo), before ReLU
  std::vector<int> argmax;     // per pooled output (channel-major), index into Ho*Wo
};

/// Intermediate values kept by forward for backward.
struct ForwardCache {
  std::vector<std::vector<ConvCache>> conv;  // [image][layer]
  std::vector<Eigen::MatrixXd> fc_in;        // [layer]: in x B
  std::vector<Eigen::MatrixXd> fc_pre;       // [layer]: out x B
  Eigen::Index batch = 0;

  /// ReLU on/off states and pool winners of every unit; two inputs with equal
  /// signatures lie in the same linear region of the network.
  std::vector<int> activation_signature() const;
};

struct ForwardResult {
  Eigen::MatrixXd embeddings;  // B x D
  ForwardCache cache;
};

/// Pixels are divided by 255 before the first layer. Throws ShapeError when an
/// image does not match the input shape.
ForwardResult forward(const EmbeddingNet& net, std::span<const Image> batch);

/// Embeddings only.
Eigen::MatrixXd embed(const EmbeddingNet& net, std::span<const Image> batch);

/// Gradient of sum(upstream .* embeddings) with respect to every parameter.
GradientSet backward(const EmbeddingNet& net, const ForwardCache& cache, const Eigen::MatrixXd& upstream);

/// Plain SGD step: theta - learning_rate * grads.
EmbeddingNet apply_gradients(const EmbeddingNet& net, const GradientSet& grads, double learning_rate);

/// Image as a channels x (height*width) matrix scaled to [0, 1].
Eigen::MatrixXd image_to_matrix(const Image& img);

// Checkpoint: {format_version, architecture, input_shape, parameters}.
nlohmann::ordered_json checkpoint_to_json(const EmbeddingNet& net);
EmbeddingNet checkpoint_from_json(const nlohmann::json& doc);

nlohmann::ordered_json architecture_to_json(const NetArchitecture& arch);
NetArchitecture architecture_from_json(const nlohmann::json& doc);

/// One-line human description, e.g. "16x16x3 -> conv(8,3x3)+relu+pool -> ...".
std::string describe_architecture(const NetArchitecture& arch, const InputShape& input);

}  // namespace embedstory
