#pragma once

// Local scene graph of one snippet and the multi-head scene-graph-attention
// (SGAT) stack that turns it into a fixed-size scene representation.
//
// Node 0 is the scene node, nodes 1..n are agent tubes. An edge (src, dst)
// lets dst attend to src. Every node also attends to itself; self-loops are
// never stored in the edge list.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "compad/autodiff.hpp"
#include "compad/scene_data.hpp"
#include "compad/tensor.hpp"

namespace compad {

enum class Topology { Fully, Star, StarPlus };
enum class AggMode { Aggregated, Scene };

std::string_view to_string(Topology t);
std::string_view to_string(AggMode m);
// Accepts "fully", "star", "star-plus" / "aggregated", "scene"; throws
// ConfigError listing the valid names otherwise.
Topology parse_topology(std::string_view name);
AggMode parse_agg_mode(std::string_view name);

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// Directed edges in both directions for every connected pair, sorted
// lexicographically.
//   Fully:    all ordered pairs among the n + 1 nodes
//   Star:     scene node <-> each agent
//   StarPlus: Star plus agent <-> agent for agents sharing agent_class
std::vector<Edge> build_edges(std::size_t n_agents, std::span<const int> agent_classes,
                              Topology topology);

struct SceneGraph {
  Tensor node_features;  // (n + 1) x D
  std::vector<Edge> edges;
  Topology topology = Topology::Fully;

  std::size_t num_nodes() const { return node_features.rows(); }
};

SceneGraph build_scene_graph(const Snippet& snippet, Topology topology);

// Row-major (n + 1) x (n + 1) mask; entry (i, j) is set when node i attends
// to node j, i.e. j == i or (j, i) is an edge.
ad::Mask attention_mask(std::size_t num_nodes, std::span<const Edge> edges);

struct SgatLayerParams {
  Tensor w1;                // D_in x D_out, shared by all heads
  std::vector<Tensor> attn;  // per head, D_out x 2: column 0 scores z_i, column 1 z_j

  std::size_t heads() const { return attn.size(); }
  std::size_t in_dim() const { return w1.rows(); }
  std::size_t out_dim() const { return w1.cols(); }
};

struct SgatStackParams {
  std::vector<SgatLayerParams> layers;
  Tensor w2;  // D_last x D_scene
  AggMode agg = AggMode::Aggregated;
  // Concatenate (instead of average) the heads of the last layer; W2 then
  // reads heads * D_out values.
  bool concat_last_layer = false;

  std::size_t scene_dim() const { return w2.cols(); }
  // Width of the last layer's node features as seen by W2.
  std::size_t last_width() const;
};

struct SgatShape {
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 32;
  std::size_t scene_dim = 32;
  std::vector<std::size_t> heads;  // one entry per layer
  AggMode agg = AggMode::Aggregated;
  bool concat_last_layer = false;
};

// Default heads per layer: {4, 4, C, C}.
std::vector<std::size_t> default_heads(std::size_t num_classes);

// Uniform Xavier initialisation: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng);

SgatStackParams init_sgat(const SgatShape& shape, std::mt19937_64& rng);

// Throws DimensionError if consecutive layers or W2 do not compose.
void validate(const SgatStackParams& params);

// Parameters bound to one tape.
struct SgatLayerVars {
  ad::Var w1;
  std::vector<ad::Var> attn;
};

struct SgatStackVars {
  std::vector<SgatLayerVars> layers;
  ad::Var w2;
  AggMode agg = AggMode::Aggregated;
  bool concat_last_layer = false;
};

SgatStackVars bind(ad::Tape& tape, const SgatStackParams& params, bool requires_grad);

struct SgatLayerOutput {
  ad::Var features;                // (n + 1) x D_out (or heads * D_out)
  std::vector<ad::Var> attention;  // per head, (n + 1) x (n + 1), rows sum to 1
};

// One attention layer:
//   z = x W1
//   e_ij = LeakyReLU(a_h . [z_i || z_j]) over j in neighbours(i) + {i}
//   alpha_i = softmax_j(e_ij)
//   out_i = mean_h sum_j alpha_ij z_j     (concatenated over h with `concat`)
SgatLayerOutput sgat_layer(ad::Var x, const ad::Mask& mask, const SgatLayerVars& params,
                           double slope = 0.2, bool concat = false);

// Runs the stack and aggregates: Aggregated -> mean of all node rows, Scene ->
// node 0; either is then multiplied by W2. Returns [1 x D_scene].
ad::Var sgat_forward(ad::Tape& tape, const SceneGraph& graph, const SgatStackVars& params,
                     double slope = 0.2);

// Convenience: value of sgat_forward without gradients.
std::vector<double> sgat_forward(const SceneGraph& graph, const SgatStackParams& params,
                                 double slope = 0.2);

}  // namespace compad
