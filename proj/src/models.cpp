#include "cante/models.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace cante {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kCrnn: return "CRNN";
    case ModelKind::kResnet: return "RESNET";
    case ModelKind::kResBlstm: return "RES_BLSTM";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "CRNN") return ModelKind::kCrnn;
  if (name == "RESNET") return ModelKind::kResnet;
  if (name == "RES_BLSTM") return ModelKind::kResBlstm;
  throw ConfigError("unknown model kind '" + name + "'");
}

int ArchitectureConfig::scaled(int channels) const {
  return std::max(1, static_cast<int>(std::lround(channels * width_multiplier)));
}

int ArchitectureConfig::embedding_dim() const {
  switch (kind) {
    case ModelKind::kCrnn: return gru_hidden;
    case ModelKind::kResnet:
      return scaled(resnet_base_width << (resnet_blocks.empty() ? 0 : resnet_blocks.size() - 1)) * 4;
    case ModelKind::kResBlstm: return 2 * blstm_hidden;
  }
  return 0;
}

void ArchitectureConfig::validate() const {
  if (!(width_multiplier > 0) || !std::isfinite(width_multiplier)) {
    throw ConfigError("width_multiplier must be positive");
  }
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (input_rows < 8 || input_cols < 8) throw ConfigError("input shape too small");
  if (fc_units < 1 || gru_hidden < 1 || gru_layers < 1 || blstm_hidden < 1 || res_width < 1 ||
      resnet_base_width < 1) {
    throw ConfigError("layer sizes must be positive");
  }
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
  if (resnet_blocks.empty()) throw ConfigError("resnet_blocks must not be empty");
  for (int b : resnet_blocks) {
    if (b < 1) throw ConfigError("resnet stage sizes must be positive");
  }
  for (int c : crnn_channels) {
    if (c < 1) throw ConfigError("crnn channel widths must be positive");
  }
}

nlohmann::json to_json(const ArchitectureConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"width_multiplier", c.width_multiplier},
          {"embedding_dim", c.embedding_dim()},
          {"n_classes", c.n_classes},
          {"input_rows", c.input_rows},
          {"input_cols", c.input_cols},
          {"fc_units", c.fc_units},
          {"crnn_channels", c.crnn_channels},
          {"gru_hidden", c.gru_hidden},
          {"gru_layers", c.gru_layers},
          {"dropout", c.dropout},
          {"resnet_blocks", c.resnet_blocks},
          {"resnet_base_width", c.resnet_base_width},
          {"zero_init_residual", c.zero_init_residual},
          {"res_blocks", c.res_blocks},
          {"res_width", c.res_width},
          {"blstm_hidden", c.blstm_hidden}};
}

ArchitectureConfig architecture_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("architecture config must be an object");
  static const std::set<std::string> known{
      "kind",          "width_multiplier", "embedding_dim", "n_classes",         "input_rows",
      "input_cols",    "fc_units",         "crnn_channels", "gru_hidden",        "gru_layers",
      "dropout",       "resnet_blocks",    "resnet_base_width", "zero_init_residual", "res_blocks",
      "res_width",     "blstm_hidden"};
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) throw ConfigError("unknown architecture key '" + item.key() + "'");
  }
  ArchitectureConfig c;
  try {
    if (j.contains("kind")) c.kind = model_kind_from_string(j.at("kind").get<std::string>());
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("width_multiplier", c.width_multiplier);
    take("n_classes", c.n_classes);
    take("input_rows", c.input_rows);
    take("input_cols", c.input_cols);
    take("fc_units", c.fc_units);
    take("crnn_channels", c.crnn_channels);
    take("gru_hidden", c.gru_hidden);
    take("gru_layers", c.gru_layers);
    take("dropout", c.dropout);
    take("resnet_blocks", c.resnet_blocks);
    take("resnet_base_width", c.resnet_base_width);
    take("zero_init_residual", c.zero_init_residual);
    take("res_blocks", c.res_blocks);
    take("res_width", c.res_width);
    take("blstm_hidden", c.blstm_hidden);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad architecture config: ") + e.what());
  }
  c.validate();
  if (j.contains("embedding_dim") && j.at("embedding_dim").get<int>() != c.embedding_dim()) {
    throw ConfigError("embedding_dim " + j.at("embedding_dim").dump() +
                      " does not match the architecture (" + std::to_string(c.embedding_dim()) + ")");
  }
  return c;
}

bool similar(const EmbeddingVector& e1, const EmbeddingVector& e2, double theta) {
  if (e1.values.size() != e2.values.size()) throw ArgumentError("embedding lengths differ");
  return (e1.values - e2.values).norm() <= theta;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ArgumentError("vector lengths differ");
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace cante
