#include "compad/model.hpp"

#include <random>

#include <fmt/format.h>

#include "compad/error.hpp"

namespace compad {

std::vector<std::size_t> ModelConfig::resolved_heads() const {
  return heads.empty() ? default_heads(num_classes) : heads;
}

void validate(const ModelConfig& c) {
  if (c.feature_dim < 1 || c.hidden_dim < 1 || c.scene_dim < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (c.num_classes < 1) throw ConfigError("model needs at least one activity class");
  if (c.temporal_len < 1) throw ConfigError("temporal length must be >= 1");
  if (c.kernel_size % 2 == 0) throw ConfigError("temporal kernel size must be odd");
  if (!(c.leaky_slope > 0.0 && c.leaky_slope < 1.0)) {
    throw ConfigError("leaky slope must lie in (0, 1)");
  }
  for (auto h : c.resolved_heads()) {
    if (h < 1) throw ConfigError("every attention layer needs at least one head");
  }
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t l = 0; l < sgat.layers.size(); ++l) {
    auto& layer = sgat.layers[l];
    out.emplace_back(fmt::format("sgat.{}.w1", l), &layer.w1);
    for (std::size_t h = 0; h < layer.attn.size(); ++h) {
      out.emplace_back(fmt::format("sgat.{}.attn.{}", l, h), &layer.attn[h]);
    }
  }
  out.emplace_back("sgat.w2", &sgat.w2);
  for (std::size_t l = 0; l < temporal.conv.size(); ++l) {
    out.emplace_back(fmt::format("temporal.conv.{}.kernels", l), &temporal.conv[l].kernels);
    out.emplace_back(fmt::format("temporal.conv.{}.bias", l), &temporal.conv[l].bias);
  }
  out.emplace_back("temporal.cls.w", &temporal.cls_w);
  out.emplace_back("temporal.cls.b", &temporal.cls_b);
  out.emplace_back("temporal.br.w", &temporal.br_w);
  out.emplace_back("temporal.br.b", &temporal.br_b);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
  return out;
}

ModelParams init_model(const ModelConfig& c, std::uint64_t seed) {
  validate(c);
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.sgat = init_sgat({.in_dim = c.feature_dim,
                      .hidden_dim = c.hidden_dim,
                      .scene_dim = c.scene_dim,
                      .heads = c.resolved_heads(),
                      .agg = c.agg,
                      .concat_last_layer = c.concat_last_layer},
                     rng);
  p.temporal = init_temporal(
      {.scene_dim = c.scene_dim, .num_classes = c.num_classes, .kernel_size = c.kernel_size},
      rng);
  return p;
}

ModelVars bind(ad::Tape& tape, const ModelParams& params, bool requires_grad) {
  ModelVars v;
  v.sgat = bind(tape, params.sgat, requires_grad);
  v.temporal = bind(tape, params.temporal, requires_grad);
  for (const auto& layer : v.sgat.layers) {
    v.all.push_back(layer.w1);
    for (const auto& a : layer.attn) v.all.push_back(a);
  }
  v.all.push_back(v.sgat.w2);
  for (const auto& c : v.temporal.conv) {
    v.all.push_back(c.kernels);
    v.all.push_back(c.bias);
  }
  v.all.push_back(v.temporal.cls_w);
  v.all.push_back(v.temporal.cls_b);
  v.all.push_back(v.temporal.br_w);
  v.all.push_back(v.temporal.br_b);
  return v;
}

ModelVars assemble(const ModelParams& layout, std::span<const ad::Var> vars) {
  const std::size_t expected = layout.named().size();
  if (vars.size() != expected) {
    throw DimensionError(
        fmt::format("assemble: {} variables for {} parameters", vars.size(), expected));
  }
  std::size_t k = 0;
  ModelVars v;
  v.sgat.agg = layout.sgat.agg;
  v.sgat.concat_last_layer = layout.sgat.concat_last_layer;
  for (const auto& layer : layout.sgat.layers) {
    SgatLayerVars lv;
    lv.w1 = vars[k++];
    for (std::size_t h = 0; h < layer.attn.size(); ++h) lv.attn.push_back(vars[k++]);
    v.sgat.layers.push_back(std::move(lv));
  }
  v.sgat.w2 = vars[k++];
  for (std::size_t l = 0; l < layout.temporal.conv.size(); ++l) {
    TemporalVars::Conv c;
    c.kernels = vars[k++];
    c.bias = vars[k++];
    v.temporal.conv.push_back(c);
  }
  v.temporal.cls_w = vars[k++];
  v.temporal.cls_b = vars[k++];
  v.temporal.br_w = vars[k++];
  v.temporal.br_b = vars[k++];
  v.all.assign(vars.begin(), vars.end());
  return v;
}

TemporalOutput forward_chunk(ad::Tape& tape, const ModelVars& vars, const VideoSample& chunk,
                             const ModelConfig& config) {
  std::vector<ad::Var> reprs;
  reprs.reserve(chunk.snippets.size());
  for (const Snippet& s : chunk.snippets) {
    reprs.push_back(
        sgat_forward(tape, build_scene_graph(s, config.topology), vars.sgat, config.leaky_slope));
  }
  ad::Var graph;
  if (reprs.empty()) {
    graph = tape.constant(Tensor(Shape{config.temporal_len, config.scene_dim}));
  } else {
    graph = build_temporal_graph(reprs, config.temporal_len);
  }
  return temporal_forward(graph, reprs.size(), vars.temporal);
}

}  // namespace compad
