#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <memory>
#include <string>
#include <vector>

#include "cante/features.hpp"
#include "cante/nn/layers.hpp"

namespace cante {

enum class ModelKind { kCrnn, kResnet, kResBlstm };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Architecture hyperparameters. width_multiplier scales every convolutional
/// width; recurrent sizes are set directly.
struct ArchitectureConfig {
  ModelKind kind = ModelKind::kResBlstm;
  double width_multiplier = 1.0;
  int n_classes = 5;
  int input_rows = kFeatureRows;
  int input_cols = kFeatureCols;
  int fc_units = 1024;

  std::vector<int> crnn_channels{64, 128, 128, 128};
  int gru_hidden = 32;
  int gru_layers = 2;
  double dropout = 0.1;

  std::vector<int> resnet_blocks{3, 4, 6, 3};
  int resnet_base_width = 64;
  bool zero_init_residual = false;

  int res_blocks = 2;
  int res_width = 32;
  int blstm_hidden = 128;

  int scaled(int channels) const;
  int embedding_dim() const;
  void validate() const;
};

nlohmann::json to_json(const ArchitectureConfig& cfg);
/// Unknown keys and an inconsistent embedding_dim are rejected.
ArchitectureConfig architecture_from_json(const nlohmann::json& j);

namespace models {

using nn::Index;
using nn::Shape;
using nn::Var;

template <typename Scalar>
struct Output {
  Var<Scalar> embedding;
  Var<Scalar> logits;
};

/// Common base: input validation, classifier head and dropout randomness.
template <typename Scalar>
class Model : public nn::Module<Scalar> {
 public:
  Model(const ArchitectureConfig& cfg, Rng& rng) : cfg_(cfg), dropout_rng_(rng.fork("dropout")) {}

  const ArchitectureConfig& config() const { return cfg_; }

  /// x has shape [N, 1, rows, cols].
  Output<Scalar> forward(const Var<Scalar>& x) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != cfg_.input_rows || s[3] != cfg_.input_cols) {
      throw ShapeError("model input must be [N,1," + std::to_string(cfg_.input_rows) + "," +
                       std::to_string(cfg_.input_cols) + "], got " + nn::shape_string(s));
    }
    Output<Scalar> out;
    out.embedding = embed_graph(x);
    out.logits = (*fc2_)(head_activation(out.embedding));
    return out;
  }

  void reseed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

 protected:
  virtual Var<Scalar> embed_graph(const Var<Scalar>& x) = 0;

  void build_head(Rng& rng) {
    fc1_ = this->register_module(
        "fc1", std::make_unique<nn::Linear<Scalar>>(cfg_.embedding_dim(), cfg_.fc_units, rng));
    fc2_ = this->register_module(
        "fc2", std::make_unique<nn::Linear<Scalar>>(cfg_.fc_units, cfg_.n_classes, rng));
  }

  virtual Var<Scalar> head_activation(const Var<Scalar>& e) { return nn::relu((*fc1_)(e)); }

  ArchitectureConfig cfg_;
  Rng dropout_rng_;
  nn::Linear<Scalar>* fc1_ = nullptr;
  nn::Linear<Scalar>* fc2_ = nullptr;
};

/// Conv, batch norm, ELU, max pool and dropout.
template <typename Scalar>
struct CrnnBlock : nn::Module<Scalar> {
  CrnnBlock(Index in, Index out, Index conv_stride, Index pool, Rng& rng) : pool_size(pool) {
    conv = this->register_module("conv", std::make_unique<nn::Conv2d<Scalar>>(
                                             in, out, 3, conv_stride, 1, false, rng));
    bn = this->register_module("bn", std::make_unique<nn::BatchNorm2d<Scalar>>(out));
  }
  Var<Scalar> operator()(const Var<Scalar>& x, double p, Rng& rng) const {
    Var<Scalar> y = nn::elu((*bn)((*conv)(x)));
    y = nn::max_pool2d(y, pool_size, 2);
    return nn::dropout(y, p, rng, this->training());
  }
  Index pool_size;
  nn::Conv2d<Scalar>* conv = nullptr;
  nn::BatchNorm2d<Scalar>* bn = nullptr;
};

inline Index conv_out(Index in, Index k, Index stride, Index pad) { return (in + 2 * pad - k) / stride + 1; }

/// Frequency height left after the four CRNN blocks.
inline Index crnn_output_rows(Index rows) {
  rows = conv_out(conv_out(rows, 3, 2, 1), 3, 2, 0);
  for (int b = 1; b < 4; ++b) rows = conv_out(rows, 2, 2, 0);
  return rows;
}

template <typename Scalar>
class Crnn : public Model<Scalar> {
 public:
  Crnn(const ArchitectureConfig& cfg, Rng& rng) : Model<Scalar>(cfg, rng) {
    if (cfg.crnn_channels.size() != 4) throw ConfigError("CRNN needs exactly four block widths");
    Index in = 1;
    for (int b = 0; b < 4; ++b) {
      const Index out = cfg.scaled(cfg.crnn_channels[static_cast<std::size_t>(b)]);
      blocks.push_back(this->register_module(
          "block" + std::to_string(b + 1),
          std::make_unique<CrnnBlock<Scalar>>(in, out, b == 0 ? 2 : 1, b == 0 ? 3 : 2, rng)));
      in = out;
    }
    const Index rows = crnn_output_rows(cfg.input_rows);
    if (rows < 1) throw ConfigError("CRNN input height too small");
    gru = this->register_module(
        "gru", std::make_unique<nn::GRU<Scalar>>(in * rows, cfg.gru_hidden, cfg.gru_layers, rng));
    this->build_head(rng);
  }

  std::vector<CrnnBlock<Scalar>*> blocks;
  nn::GRU<Scalar>* gru = nullptr;

 protected:
  Var<Scalar> embed_graph(const Var<Scalar>& x) override {
    Var<Scalar> y = x;
    for (auto* b : blocks) y = (*b)(y, this->cfg_.dropout, this->dropout_rng_);
    return (*gru)(nn::freq_flatten_sequence(y)).back();
  }

  Var<Scalar> head_activation(const Var<Scalar>& e) override { return nn::elu((*this->fc1_)(e)); }
};

/// Projection shortcut: 1x1 convolution plus batch norm.
template <typename Scalar>
struct Projection : nn::Module<Scalar> {
  Projection(Index in, Index out, Index stride, Rng& rng) {
    conv = this->register_module("conv",
                                 std::make_unique<nn::Conv2d<Scalar>>(in, out, 1, stride, 0, false, rng));
    bn = this->register_module("bn", std::make_unique<nn::BatchNorm2d<Scalar>>(out));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return (*bn)((*conv)(x)); }
  nn::Conv2d<Scalar>* conv = nullptr;
  nn::BatchNorm2d<Scalar>* bn = nullptr;
};

template <typename Scalar>
struct Bottleneck : nn::Module<Scalar> {
  static constexpr int kExpansion = 4;

  Bottleneck(Index in, Index width, Index stride, bool zero_init, Rng& rng) {
    const Index out = width * kExpansion;
    conv1 = this->register_module("conv1",
                                  std::make_unique<nn::Conv2d<Scalar>>(in, width, 1, 1, 0, false, rng));
    bn1 = this->register_module("bn1", std::make_unique<nn::BatchNorm2d<Scalar>>(width));
    conv2 = this->register_module(
        "conv2", std::make_unique<nn::Conv2d<Scalar>>(width, width, 3, stride, 1, false, rng));
    bn2 = this->register_module("bn2", std::make_unique<nn::BatchNorm2d<Scalar>>(width));
    conv3 = this->register_module("conv3",
                                  std::make_unique<nn::Conv2d<Scalar>>(width, out, 1, 1, 0, false, rng));
    bn3 = this->register_module("bn3", std::make_unique<nn::BatchNorm2d<Scalar>>(out));
    if (zero_init) bn3->gamma.mutable_value().array().setZero();
    if (stride != 1 || in != out) {
      shortcut = this->register_module("shortcut",
                                       std::make_unique<Projection<Scalar>>(in, out, stride, rng));
    }
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    Var<Scalar> y = nn::relu((*bn1)((*conv1)(x)));
    y = nn::relu((*bn2)((*conv2)(y)));
    y = (*bn3)((*conv3)(y));
    return nn::relu(nn::add(y, shortcut ? (*shortcut)(x) : x));
  }

  nn::Conv2d<Scalar>*conv1 = nullptr, *conv2 = nullptr, *conv3 = nullptr;
  nn::BatchNorm2d<Scalar>*bn1 = nullptr, *bn2 = nullptr, *bn3 = nullptr;
  Projection<Scalar>* shortcut = nullptr;
};

template <typename Scalar>
class Resnet : public Model<Scalar> {
 public:
  Resnet(const ArchitectureConfig& cfg, Rng& rng) : Model<Scalar>(cfg, rng) {
    const Index stem_width = cfg.scaled(cfg.resnet_base_width);
    stem = this->register_module(
        "stem", std::make_unique<nn::Conv2d<Scalar>>(1, stem_width, 3, 1, 1, false, rng));
    stem_bn = this->register_module("stem_bn", std::make_unique<nn::BatchNorm2d<Scalar>>(stem_width));
    Index in = stem_width;
    for (std::size_t s = 0; s < cfg.resnet_blocks.size(); ++s) {
      const Index width = cfg.scaled(cfg.resnet_base_width << s);
      for (int b = 0; b < cfg.resnet_blocks[s]; ++b) {
        const Index stride = (s > 0 && b == 0) ? 2 : 1;
        blocks.push_back(this->register_module(
            "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1),
            std::make_unique<Bottleneck<Scalar>>(in, width, stride, cfg.zero_init_residual, rng)));
        in = width * Bottleneck<Scalar>::kExpansion;
      }
    }
    this->build_head(rng);
  }

  /// Stem convolution, batch norm, ReLU and max pool.
  Var<Scalar> stem_path(const Var<Scalar>& x) const {
    return nn::max_pool2d(nn::relu((*stem_bn)((*stem)(x))), 3, 2, 1);
  }

  nn::Conv2d<Scalar>* stem = nullptr;
  nn::BatchNorm2d<Scalar>* stem_bn = nullptr;
  std::vector<Bottleneck<Scalar>*> blocks;

 protected:
  Var<Scalar> embed_graph(const Var<Scalar>& x) override {
    Var<Scalar> y = stem_path(x);
    for (auto* b : blocks) y = (*b)(y);
    return nn::global_avg_pool(y);
  }
};

/// Two 3x3 convolutions with a residual connection.
template <typename Scalar>
struct BasicBlock : nn::Module<Scalar> {
  BasicBlock(Index in, Index out, Index stride, Rng& rng) {
    conv1 = this->register_module(
        "conv1", std::make_unique<nn::Conv2d<Scalar>>(in, out, 3, stride, 1, false, rng));
    bn1 = this->register_module("bn1", std::make_unique<nn::BatchNorm2d<Scalar>>(out));
    conv2 = this->register_module("conv2",
                                  std::make_unique<nn::Conv2d<Scalar>>(out, out, 3, 1, 1, false, rng));
    bn2 = this->register_module("bn2", std::make_unique<nn::BatchNorm2d<Scalar>>(out));
    if (stride != 1 || in != out) {
      shortcut = this->register_module("shortcut",
                                       std::make_unique<Projection<Scalar>>(in, out, stride, rng));
    }
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    Var<Scalar> y = nn::relu((*bn1)((*conv1)(x)));
    y = (*bn2)((*conv2)(y));
    return nn::relu(nn::add(y, shortcut ? (*shortcut)(x) : x));
  }

  nn::Conv2d<Scalar>*conv1 = nullptr, *conv2 = nullptr;
  nn::BatchNorm2d<Scalar>*bn1 = nullptr, *bn2 = nullptr;
  Projection<Scalar>* shortcut = nullptr;
};

template <typename Scalar>
class ResBlstm : public Model<Scalar> {
 public:
  ResBlstm(const ArchitectureConfig& cfg, Rng& rng) : Model<Scalar>(cfg, rng) {
    if (cfg.res_blocks < 1) throw ConfigError("RES_BLSTM needs at least one residual block");
    const Index width = cfg.scaled(cfg.res_width);
    for (int b = 0; b < cfg.res_blocks; ++b) {
      blocks.push_back(this->register_module(
          "block" + std::to_string(b + 1),
          std::make_unique<BasicBlock<Scalar>>(b == 0 ? 1 : width, width, b == 0 ? 2 : 1, rng)));
    }
    blstm = this->register_module("blstm",
                                  std::make_unique<nn::BLSTM<Scalar>>(width, cfg.blstm_hidden, rng));
    this->build_head(rng);
  }

  std::vector<BasicBlock<Scalar>*> blocks;
  nn::BLSTM<Scalar>* blstm = nullptr;

 protected:
  Var<Scalar> embed_graph(const Var<Scalar>& x) override {
    Var<Scalar> y = x;
    for (auto* b : blocks) y = (*b)(y);
    return (*blstm)(nn::freq_mean_sequence(y)).final;
  }
};

template <typename Scalar>
std::unique_ptr<Model<Scalar>> build_crnn(const ArchitectureConfig& cfg, Rng& rng) {
  if (cfg.kind != ModelKind::kCrnn) throw ConfigError("build_crnn needs kind CRNN");
  cfg.validate();
  return std::make_unique<Crnn<Scalar>>(cfg, rng);
}

template <typename Scalar>
std::unique_ptr<Model<Scalar>> build_resnet(const ArchitectureConfig& cfg, Rng& rng) {
  if (cfg.kind != ModelKind::kResnet) throw ConfigError("build_resnet needs kind RESNET");
  cfg.validate();
  return std::make_unique<Resnet<Scalar>>(cfg, rng);
}

template <typename Scalar>
std::unique_ptr<Model<Scalar>> build_res_blstm(const ArchitectureConfig& cfg, Rng& rng) {
  if (cfg.kind != ModelKind::kResBlstm) throw ConfigError("build_res_blstm needs kind RES_BLSTM");
  cfg.validate();
  return std::make_unique<ResBlstm<Scalar>>(cfg, rng);
}

template <typename Scalar>
std::unique_ptr<Model<Scalar>> build_model(const ArchitectureConfig& cfg, Rng& rng) {
  switch (cfg.kind) {
    case ModelKind::kCrnn: return build_crnn<Scalar>(cfg, rng);
    case ModelKind::kResnet: return build_resnet<Scalar>(cfg, rng);
    case ModelKind::kResBlstm: return build_res_blstm<Scalar>(cfg, rng);
  }
  throw ConfigError("unknown model kind");
}

/// Packs feature grids into a batch tensor [N, 1, rows, cols].
template <typename Scalar>
nn::Tensor<Scalar> batch_tensor(const std::vector<const FeatureGrid*>& grids) {
  if (grids.empty()) throw ArgumentError("empty batch");
  const Index rows = grids[0]->rows(), cols = grids[0]->cols();
  nn::Tensor<Scalar> t({static_cast<Index>(grids.size()), 1, rows, cols});
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (grids[i]->rows() != rows || grids[i]->cols() != cols) throw ShapeError("ragged batch");
    t.array().segment(static_cast<Index>(i) * rows * cols, rows * cols) =
        Eigen::Map<const Eigen::ArrayXf>(grids[i]->data(), rows * cols).template cast<Scalar>();
  }
  return t;
}

}  // namespace models

struct EmbeddingVector {
  Eigen::VectorXd values;
  FeatureSource source;
};

/// Inference-mode embedding of one feature matrix.
template <typename Scalar>
EmbeddingVector embed(models::Model<Scalar>& model, const FeatureMatrix& features) {
  const bool was_training = model.training();
  model.set_training(false);
  nn::NoGradGuard guard;
  auto x = nn::Var<Scalar>::leaf(models::batch_tensor<Scalar>({&features.data}));
  auto out = model.forward(x);
  model.set_training(was_training);
  EmbeddingVector e;
  e.values = out.embedding.value().array().template cast<double>().matrix();
  e.source = features.source;
  return e;
}

/// Inclusive Euclidean threshold: ||e1 - e2|| <= theta.
bool similar(const EmbeddingVector& e1, const EmbeddingVector& e2, double theta);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace cante
