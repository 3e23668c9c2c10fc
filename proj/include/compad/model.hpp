#pragma once

// The full detector: per-snippet SGAT stack feeding the temporal localizer.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "compad/autodiff.hpp"
#include "compad/scene_data.hpp"
#include "compad/scene_graph.hpp"
#include "compad/temporal.hpp"

namespace compad {

struct ModelConfig {
  std::size_t feature_dim = 64;   // D_in
  std::size_t num_classes = 3;    // C
  std::size_t hidden_dim = 32;    // SGAT layer width
  std::size_t scene_dim = 32;     // D_scene, W2 output
  std::vector<std::size_t> heads;  // empty -> {4, 4, C, C}
  Topology topology = Topology::Fully;
  AggMode agg = AggMode::Aggregated;
  bool concat_last_layer = false;
  double leaky_slope = 0.2;
  std::size_t temporal_len = 128;  // N
  std::size_t kernel_size = 3;

  std::vector<std::size_t> resolved_heads() const;
};

void validate(const ModelConfig& config);

struct ModelParams {
  SgatStackParams sgat;
  TemporalParams temporal;

  // Every learnable tensor in a fixed order; names are stable and used by
  // checkpoints and optimizer error messages.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

struct ModelVars {
  SgatStackVars sgat;
  TemporalVars temporal;
  // Same order as ModelParams::named().
  std::vector<ad::Var> all;
};

ModelVars bind(ad::Tape& tape, const ModelParams& params, bool requires_grad);
// Rebuilds the structured view from vars given in ModelParams::named() order;
// `layout` supplies the layer and head counts.
ModelVars assemble(const ModelParams& layout, std::span<const ad::Var> vars);

// SGAT over every snippet of `chunk`, stacked into the length-N temporal graph,
// then the temporal stack. chunk.snippets.size() must not exceed N.
TemporalOutput forward_chunk(ad::Tape& tape, const ModelVars& vars, const VideoSample& chunk,
                             const ModelConfig& config);

}  // namespace compad
