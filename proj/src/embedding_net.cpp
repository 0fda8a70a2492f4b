#include "embedstory/embedding_net.hpp"

#include <cmath>
#include <string>

#include "embedstory/errors.hpp"
#include "embedstory/rng.hpp"

namespace embedstory {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

int NetArchitecture::embedding_dim() const { return fc_layers.empty() ? 0 : fc_layers.back().out_dim; }

NetArchitecture NetArchitecture::desk_default() {
  NetArchitecture arch;
  arch.conv_layers = {{8, 3}, {16, 3}};
  arch.fc_layers = {{32, Activation::linear}};
  return arch;
}

ShapeTable infer_shapes(const NetArchitecture& arch, const InputShape& input) {
  if (input.height < 1 || input.width < 1 || (input.channels != 1 && input.channels != 3)) {
    throw ShapeError("input shape must be HxWx{1,3} with H, W >= 1");
  }
  if (arch.fc_layers.empty()) throw ShapeError("architecture needs at least one fc layer");
  if (arch.fc_layers.back().activation != Activation::linear) throw ShapeError("final fc layer must be linear");
  ShapeTable table;
  FeatureShape shape{input.channels, input.height, input.width};
  for (std::size_t l = 0; l < arch.conv_layers.size(); ++l) {
    const auto& layer = arch.conv_layers[l];
    if (layer.out_channels < 1 || layer.kernel < 1) {
      throw ShapeError("conv layer " + std::to_string(l) + ": channels and kernel must be >= 1");
    }
    FeatureShape conv{layer.out_channels, shape.height - layer.kernel + 1, shape.width - layer.kernel + 1};
    FeatureShape pool{conv.channels, conv.height / 2, conv.width / 2};
    if (conv.height < 1 || conv.width < 1 || pool.height < 1 || pool.width < 1) {
      throw ShapeError("spatial size underflow at conv layer " + std::to_string(l));
    }
    table.conv_out.push_back(conv);
    table.pool_out.push_back(pool);
    shape = pool;
  }
  for (const auto& fc : arch.fc_layers) {
    if (fc.out_dim < 1) throw ShapeError("fc layer out_dim must be >= 1");
  }
  table.flat_dim = shape.size();
  return table;
}

// ---------------------------------------------------------------------------
// ParameterSet

Index ParameterSet::size() const {
  Index n = 0;
  for (const auto* group : {&conv, &fc}) {
    for (const auto& p : *group) n += p.weight.size() + p.bias.size();
  }
  return n;
}

VectorXd ParameterSet::flatten() const {
  VectorXd flat(size());
  Index at = 0;
  for (const auto* group : {&conv, &fc}) {
    for (const auto& p : *group) {
      flat.segment(at, p.weight.size()) = p.weight.reshaped();
      at += p.weight.size();
      flat.segment(at, p.bias.size()) = p.bias;
      at += p.bias.size();
    }
  }
  return flat;
}

ParameterSet ParameterSet::unflatten(const VectorXd& flat) const {
  if (flat.size() != size()) throw ShapeError("flat parameter vector has wrong length");
  ParameterSet out = *this;
  Index at = 0;
  for (auto* group : {&out.conv, &out.fc}) {
    for (auto& p : *group) {
      p.weight.reshaped() = flat.segment(at, p.weight.size());
      at += p.weight.size();
      p.bias = flat.segment(at, p.bias.size());
      at += p.bias.size();
    }
  }
  return out;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out = *this;
  for (auto* group : {&out.conv, &out.fc}) {
    for (auto& p : *group) {
      p.weight.setZero();
      p.bias.setZero();
    }
  }
  return out;
}

bool ParameterSet::same_shape(const ParameterSet& other) const {
  auto layers_match = [](const std::vector<DenseParams>& a, const std::vector<DenseParams>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].weight.rows() != b[i].weight.rows() || a[i].weight.cols() != b[i].weight.cols() ||
          a[i].bias.size() != b[i].bias.size()) {
        return false;
      }
    }
    return true;
  };
  return layers_match(conv, other.conv) && layers_match(fc, other.fc);
}

EmbeddingNet init_network(const NetArchitecture& arch, const InputShape& input, std::uint64_t seed) {
  const ShapeTable shapes = infer_shapes(arch, input);
  SplitMix64 rng(seed);
  auto he = [&rng](Index rows, Index cols) {
    const double scale = std::sqrt(2.0 / static_cast<double>(cols));
    MatrixXd w(rows, cols);
    // Row-major fill so the draw order follows the checkpoint layout.
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) w(r, c) = scale * rng.normal();
    }
    return w;
  };
  EmbeddingNet net{arch, input, {}};
  int in_channels = input.channels;
  for (const auto& layer : arch.conv_layers) {
    const Index fan_in = static_cast<Index>(in_channels) * layer.kernel * layer.kernel;
    net.parameters.conv.push_back({he(layer.out_channels, fan_in), VectorXd::Zero(layer.out_channels)});
    in_channels = layer.out_channels;
  }
  Index in_dim = shapes.flat_dim;
  for (const auto& layer : arch.fc_layers) {
    net.parameters.fc.push_back({he(layer.out_dim, in_dim), VectorXd::Zero(layer.out_dim)});
    in_dim = layer.out_dim;
  }
  return net;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

MatrixXd im2col(const MatrixXd& input, const FeatureShape& in, int kernel, const FeatureShape& out) {
  MatrixXd cols(static_cast<Index>(in.channels) * kernel * kernel, static_cast<Index>(out.height) * out.width);
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const Index row = (static_cast<Index>(c) * kernel + ky) * kernel + kx;
        for (int y = 0; y < out.height; ++y) {
          for (int x = 0; x < out.width; ++x) {
            cols(row, static_cast<Index>(y) * out.width + x) = input(c, static_cast<Index>(y + ky) * in.width + x + kx);
          }
        }
      }
    }
  }
  return cols;
}

MatrixXd col2im(const MatrixXd& cols, const FeatureShape& in, int kernel, const FeatureShape& out) {
  MatrixXd input = MatrixXd::Zero(in.channels, static_cast<Index>(in.height) * in.width);
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const Index row = (static_cast<Index>(c) * kernel + ky) * kernel + kx;
        for (int y = 0; y < out.height; ++y) {
          for (int x = 0; x < out.width; ++x) {
            input(c, static_cast<Index>(y + ky) * in.width + x + kx) += cols(row, static_cast<Index>(y) * out.width + x);
          }
        }
      }
    }
  }
  return input;
}

// 2x2 stride-2 max-pool; ties go to the first element in row-major order.
MatrixXd max_pool(const MatrixXd& act, const FeatureShape& conv, const FeatureShape& pool, std::vector<int>& argmax) {
  MatrixXd out(pool.channels, static_cast<Index>(pool.height) * pool.width);
  argmax.assign(static_cast<std::size_t>(pool.size()), 0);
  for (int c = 0; c < pool.channels; ++c) {
    for (int py = 0; py < pool.height; ++py) {
      for (int px = 0; px < pool.width; ++px) {
        int best = (2 * py) * conv.width + 2 * px;
        double best_v = act(c, best);
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * py + dy) * conv.width + 2 * px + dx;
            if (act(c, idx) > best_v) {
              best_v = act(c, idx);
              best = idx;
            }
          }
        }
        const Index p = static_cast<Index>(py) * pool.width + px;
        out(c, p) = best_v;
        argmax[static_cast<std::size_t>(c) * pool.height * pool.width + p] = best;
      }
    }
  }
  return out;
}

}  // namespace

MatrixXd image_to_matrix(const Image& img) {
  MatrixXd m(img.channels, static_cast<Index>(img.height) * img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) m(c, static_cast<Index>(y) * img.width + x) = img.at(y, x, c) / 255.0;
    }
  }
  return m;
}

std::vector<int> ForwardCache::activation_signature() const {
  std::vector<int> sig;
  for (const auto& image : conv) {
    for (const auto& layer : image) {
      for (Index i = 0; i < layer.pre.size(); ++i) sig.push_back(layer.pre.data()[i] > 0.0);
      sig.insert(sig.end(), layer.argmax.begin(), layer.argmax.end());
    }
  }
  for (const auto& pre : fc_pre) {
    for (Index i = 0; i < pre.size(); ++i) sig.push_back(pre.data()[i] > 0.0);
  }
  return sig;
}

ForwardResult forward(const EmbeddingNet& net, std::span<const Image> batch) {
  const ShapeTable shapes = infer_shapes(net.architecture, net.input_shape);
  const auto& in = net.input_shape;
  const Index B = static_cast<Index>(batch.size());
  ForwardResult result;
  result.cache.batch = B;
  result.cache.conv.resize(batch.size());
  MatrixXd flat(shapes.flat_dim, B);

  for (Index b = 0; b < B; ++b) {
    const Image& img = batch[static_cast<std::size_t>(b)];
    if (img.height != in.height || img.width != in.width || img.channels != in.channels) {
      throw ShapeError("image '" + img.id + "' is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                       "x" + std::to_string(img.channels) + ", network expects " + std::to_string(in.height) + "x" +
                       std::to_string(in.width) + "x" + std::to_string(in.channels));
    }
    check_image(img);
    MatrixXd act = image_to_matrix(img);
    FeatureShape shape{in.channels, in.height, in.width};
    auto& layers = result.cache.conv[static_cast<std::size_t>(b)];
    layers.resize(net.architecture.conv_layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const int k = net.architecture.conv_layers[l].kernel;
      const auto& p = net.parameters.conv[l];
      ConvCache& cc = layers[l];
      cc.cols = im2col(act, shape, k, shapes.conv_out[l]);
      cc.pre = p.weight * cc.cols;
      cc.pre.colwise() += p.bias;
      const MatrixXd relu = cc.pre.cwiseMax(0.0);
      act = max_pool(relu, shapes.conv_out[l], shapes.pool_out[l], cc.argmax);
      shape = shapes.pool_out[l];
    }
    // Channel-major flatten: index = c * (H*W) + spatial.
    flat.col(b) = act.transpose().reshaped();
  }

  MatrixXd x = std::move(flat);
  for (std::size_t l = 0; l < net.architecture.fc_layers.size(); ++l) {
    const auto& p = net.parameters.fc[l];
    result.cache.fc_in.push_back(x);
    MatrixXd z = p.weight * x;
    z.colwise() += p.bias;
    result.cache.fc_pre.push_back(z);
    x = net.architecture.fc_layers[l].activation == Activation::relu ? MatrixXd(z.cwiseMax(0.0)) : z;
  }
  result.embeddings = x.transpose();
  return result;
}

MatrixXd embed(const EmbeddingNet& net, std::span<const Image> batch) { return forward(net, batch).embeddings; }

GradientSet backward(const EmbeddingNet& net, const ForwardCache& cache, const MatrixXd& upstream) {
  const ShapeTable shapes = infer_shapes(net.architecture, net.input_shape);
  const auto& arch = net.architecture;
  if (upstream.rows() != cache.batch || upstream.cols() != arch.embedding_dim() ||
      cache.fc_pre.size() != arch.fc_layers.size() || static_cast<Index>(cache.conv.size()) != cache.batch) {
    throw ShapeError("backward: upstream is " + std::to_string(upstream.rows()) + "x" +
                     std::to_string(upstream.cols()) + ", cache expects " + std::to_string(cache.batch) + "x" +
                     std::to_string(arch.embedding_dim()));
  }
  GradientSet grads = net.parameters.zeros_like();

  MatrixXd d = upstream.transpose();  // out x B
  for (std::size_t l = arch.fc_layers.size(); l-- > 0;) {
    if (arch.fc_layers[l].activation == Activation::relu) {
      d = d.cwiseProduct((cache.fc_pre[l].array() > 0.0).cast<double>().matrix());
    }
    grads.fc[l].weight = d * cache.fc_in[l].transpose();
    grads.fc[l].bias = d.rowwise().sum();
    d = net.parameters.fc[l].weight.transpose() * d;
  }
  if (arch.conv_layers.empty()) return grads;

  for (Index b = 0; b < cache.batch; ++b) {
    const auto& layers = cache.conv[static_cast<std::size_t>(b)];
    const FeatureShape& last = shapes.pool_out.back();
    // Undo the channel-major flatten.
    MatrixXd dpool = d.col(b).reshaped(static_cast<Index>(last.height) * last.width, last.channels).transpose();
    for (std::size_t l = layers.size(); l-- > 0;) {
      const FeatureShape& conv = shapes.conv_out[l];
      const FeatureShape& pool = shapes.pool_out[l];
      const ConvCache& cc = layers[l];
      MatrixXd dconv = MatrixXd::Zero(conv.channels, static_cast<Index>(conv.height) * conv.width);
      for (int c = 0; c < pool.channels; ++c) {
        for (Index p = 0; p < static_cast<Index>(pool.height) * pool.width; ++p) {
          const int src = cc.argmax[static_cast<std::size_t>(c) * pool.height * pool.width + p];
          dconv(c, src) += dpool(c, p);
        }
      }
      dconv = dconv.cwiseProduct((cc.pre.array() > 0.0).cast<double>().matrix());
      grads.conv[l].weight.noalias() += dconv * cc.cols.transpose();
      grads.conv[l].bias += dconv.rowwise().sum();
      if (l > 0) {
        const MatrixXd dcols = net.parameters.conv[l].weight.transpose() * dconv;
        dpool = col2im(dcols, shapes.pool_out[l - 1], arch.conv_layers[l].kernel, conv);
      }
    }
  }
  return grads;
}

EmbeddingNet apply_gradients(const EmbeddingNet& net, const GradientSet& grads, double learning_rate) {
  if (!net.parameters.same_shape(grads)) throw ShapeError("gradient set does not match network parameters");
  EmbeddingNet out = net;
  for (std::size_t l = 0; l < out.parameters.conv.size(); ++l) {
    out.parameters.conv[l].weight -= learning_rate * grads.conv[l].weight;
    out.parameters.conv[l].bias -= learning_rate * grads.conv[l].bias;
  }
  for (std::size_t l = 0; l < out.parameters.fc.size(); ++l) {
    out.parameters.fc[l].weight -= learning_rate * grads.fc[l].weight;
    out.parameters.fc[l].bias -= learning_rate * grads.fc[l].bias;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint JSON

namespace {

const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "linear"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "linear") return Activation::linear;
  throw DataError("unknown activation '" + s + "'");
}

nlohmann::ordered_json vector_json(const VectorXd& v) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

VectorXd vector_from_json(const nlohmann::json& j, Index expected) {
  if (!j.is_array() || static_cast<Index>(j.size()) != expected) throw DataError("checkpoint: bias length mismatch");
  VectorXd v(expected);
  for (Index i = 0; i < expected; ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

}  // namespace

nlohmann::ordered_json architecture_to_json(const NetArchitecture& arch) {
  nlohmann::ordered_json conv = nlohmann::ordered_json::array();
  for (const auto& c : arch.conv_layers) {
    conv.push_back({{"out_channels", c.out_channels}, {"kernel", c.kernel}, {"activation", "relu"}, {"pool", "max2x2"}});
  }
  nlohmann::ordered_json fc = nlohmann::ordered_json::array();
  for (const auto& f : arch.fc_layers) fc.push_back({{"out_dim", f.out_dim}, {"activation", activation_name(f.activation)}});
  return {{"conv_layers", conv}, {"fc_layers", fc}, {"embedding_dim", arch.embedding_dim()}};
}

NetArchitecture architecture_from_json(const nlohmann::json& doc) {
  NetArchitecture arch;
  for (const auto& c : doc.at("conv_layers")) arch.conv_layers.push_back({c.at("out_channels").get<int>(), c.at("kernel").get<int>()});
  for (const auto& f : doc.at("fc_layers")) {
    arch.fc_layers.push_back({f.at("out_dim").get<int>(), parse_activation(f.at("activation").get<std::string>())});
  }
  return arch;
}

nlohmann::ordered_json checkpoint_to_json(const EmbeddingNet& net) {
  nlohmann::ordered_json conv = nlohmann::ordered_json::array();
  int in_channels = net.input_shape.channels;
  for (std::size_t l = 0; l < net.parameters.conv.size(); ++l) {
    const auto& p = net.parameters.conv[l];
    const int k = net.architecture.conv_layers[l].kernel;
    nlohmann::ordered_json w = nlohmann::ordered_json::array();
    for (Index o = 0; o < p.weight.rows(); ++o) {
      nlohmann::ordered_json per_out = nlohmann::ordered_json::array();
      for (int c = 0; c < in_channels; ++c) {
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (int ky = 0; ky < k; ++ky) {
          nlohmann::ordered_json row = nlohmann::ordered_json::array();
          for (int kx = 0; kx < k; ++kx) row.push_back(p.weight(o, (static_cast<Index>(c) * k + ky) * k + kx));
          rows.push_back(row);
        }
        per_out.push_back(rows);
      }
      w.push_back(per_out);
    }
    conv.push_back({{"weight", w}, {"bias", vector_json(p.bias)}});
    in_channels = net.architecture.conv_layers[l].out_channels;
  }
  nlohmann::ordered_json fc = nlohmann::ordered_json::array();
  for (const auto& p : net.parameters.fc) {
    nlohmann::ordered_json w = nlohmann::ordered_json::array();
    for (Index o = 0; o < p.weight.rows(); ++o) w.push_back(vector_json(p.weight.row(o).transpose()));
    fc.push_back({{"weight", w}, {"bias", vector_json(p.bias)}});
  }
  nlohmann::ordered_json doc;
  doc["format_version"] = 1;
  doc["architecture"] = architecture_to_json(net.architecture);
  doc["input_shape"] = {{"height", net.input_shape.height},
                        {"width", net.input_shape.width},
                        {"channels", net.input_shape.channels}};
  doc["parameters"] = {{"conv", conv}, {"fc", fc}};
  return doc;
}

EmbeddingNet checkpoint_from_json(const nlohmann::json& doc) {
  if (doc.at("format_version").get<int>() != 1) throw DataError("checkpoint: unsupported format_version");
  const auto& shape = doc.at("input_shape");
  const InputShape input{shape.at("height").get<int>(), shape.at("width").get<int>(), shape.at("channels").get<int>()};
  const NetArchitecture arch = architecture_from_json(doc.at("architecture"));
  // Shapes come from a zero-seeded init; values are overwritten below.
  EmbeddingNet net = init_network(arch, input, 0);
  const auto& params = doc.at("parameters");
  const auto& conv = params.at("conv");
  const auto& fc = params.at("fc");
  if (conv.size() != net.parameters.conv.size() || fc.size() != net.parameters.fc.size()) {
    throw DataError("checkpoint: layer count mismatch");
  }
  int in_channels = input.channels;
  for (std::size_t l = 0; l < conv.size(); ++l) {
    auto& p = net.parameters.conv[l];
    const int k = arch.conv_layers[l].kernel;
    const auto& w = conv[l].at("weight");
    if (static_cast<Index>(w.size()) != p.weight.rows()) throw DataError("checkpoint: conv weight shape mismatch");
    for (Index o = 0; o < p.weight.rows(); ++o) {
      const auto& per_out = w[static_cast<std::size_t>(o)];
      if (static_cast<int>(per_out.size()) != in_channels) throw DataError("checkpoint: conv weight shape mismatch");
      for (int c = 0; c < in_channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
          const auto& row = per_out[static_cast<std::size_t>(c)].at(static_cast<std::size_t>(ky));
          if (static_cast<int>(row.size()) != k) throw DataError("checkpoint: conv weight shape mismatch");
          for (int kx = 0; kx < k; ++kx) {
            p.weight(o, (static_cast<Index>(c) * k + ky) * k + kx) = row[static_cast<std::size_t>(kx)].get<double>();
          }
        }
      }
    }
    p.bias = vector_from_json(conv[l].at("bias"), p.bias.size());
    in_channels = arch.conv_layers[l].out_channels;
  }
  for (std::size_t l = 0; l < fc.size(); ++l) {
    auto& p = net.parameters.fc[l];
    const auto& w = fc[l].at("weight");
    if (static_cast<Index>(w.size()) != p.weight.rows()) throw DataError("checkpoint: fc weight shape mismatch");
    for (Index o = 0; o < p.weight.rows(); ++o) {
      p.weight.row(o) = vector_from_json(w[static_cast<std::size_t>(o)], p.weight.cols()).transpose();
    }
    p.bias = vector_from_json(fc[l].at("bias"), p.bias.size());
  }
  return net;
}

std::string describe_architecture(const NetArchitecture& arch, const InputShape& input) {
  std::string s = std::to_string(input.height) + "x" + std::to_string(input.width) + "x" + std::to_string(input.channels);
  for (const auto& c : arch.conv_layers) {
    s += " -> conv(" + std::to_string(c.out_channels) + ", " + std::to_string(c.kernel) + "x" + std::to_string(c.kernel) +
         ", relu) -> maxpool(2x2)";
  }
  s += " -> flatten";
  for (const auto& f : arch.fc_layers) {
    s += " -> fc(" + std::to_string(f.out_dim) + ", " + activation_name(f.activation) + ")";
  }
  return s;
}

}  // namespace embedstory
