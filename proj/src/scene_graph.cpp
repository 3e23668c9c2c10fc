#include "compad/scene_graph.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "compad/error.hpp"

namespace compad {

std::string_view to_string(Topology t) {
  switch (t) {
    case Topology::Fully: return "fully";
    case Topology::Star: return "star";
    case Topology::StarPlus: return "star-plus";
  }
  return "?";
}

std::string_view to_string(AggMode m) {
  return m == AggMode::Aggregated ? "aggregated" : "scene";
}

Topology parse_topology(std::string_view name) {
  if (name == "fully") return Topology::Fully;
  if (name == "star") return Topology::Star;
  if (name == "star-plus") return Topology::StarPlus;
  throw ConfigError(fmt::format("unknown topology '{}', expected one of {{fully, star, star-plus}}",
                                name));
}

AggMode parse_agg_mode(std::string_view name) {
  if (name == "aggregated") return AggMode::Aggregated;
  if (name == "scene") return AggMode::Scene;
  throw ConfigError(
      fmt::format("unknown aggregation '{}', expected one of {{aggregated, scene}}", name));
}

std::vector<Edge> build_edges(std::size_t n_agents, std::span<const int> agent_classes,
                              Topology topology) {
  if (agent_classes.size() != n_agents) {
    throw ContractError(fmt::format("build_edges: {} agent classes for {} agents",
                                    agent_classes.size(), n_agents));
  }
  std::vector<Edge> edges;
  const auto n = static_cast<std::uint32_t>(n_agents);
  for (std::uint32_t i = 0; i <= n; ++i) {
    for (std::uint32_t j = 0; j <= n; ++j) {
      if (i == j) continue;
      bool connected = false;
      switch (topology) {
        case Topology::Fully:
          connected = true;
          break;
        case Topology::Star:
          connected = i == 0 || j == 0;
          break;
        case Topology::StarPlus:
          connected = i == 0 || j == 0 || agent_classes[i - 1] == agent_classes[j - 1];
          break;
      }
      if (connected) edges.push_back({i, j});
    }
  }
  return edges;
}

SceneGraph build_scene_graph(const Snippet& snippet, Topology topology) {
  const std::size_t d = snippet.scene_feature.size();
  const std::size_t n = snippet.agents.size();
  SceneGraph g;
  g.topology = topology;
  g.node_features = Tensor(Shape{n + 1, d});
  auto out = g.node_features.data();
  std::copy(snippet.scene_feature.begin(), snippet.scene_feature.end(), out.begin());
  std::vector<int> classes;
  classes.reserve(n);
  for (std::size_t a = 0; a < n; ++a) {
    const auto& f = snippet.agents[a].feature;
    if (f.size() != d) {
      throw DimensionError(fmt::format("snippet {}: agent {} feature has {} values, scene has {}",
                                       snippet.index, a, f.size(), d));
    }
    std::copy(f.begin(), f.end(), out.begin() + static_cast<std::ptrdiff_t>((a + 1) * d));
    classes.push_back(snippet.agents[a].agent_class);
  }
  g.edges = build_edges(n, classes, topology);
  return g;
}

ad::Mask attention_mask(std::size_t num_nodes, std::span<const Edge> edges) {
  ad::Mask mask(num_nodes * num_nodes, 0);
  for (std::size_t i = 0; i < num_nodes; ++i) mask[i * num_nodes + i] = 1;
  for (const Edge& e : edges) {
    if (e.src >= num_nodes || e.dst >= num_nodes) {
      throw DimensionError(fmt::format("edge ({}, {}) references a node outside [0, {})",
                                       e.src, e.dst, num_nodes));
    }
    mask[e.dst * num_nodes + e.src] = 1;
  }
  return mask;
}

std::size_t SgatStackParams::last_width() const {
  if (layers.empty()) return 0;
  const auto& last = layers.back();
  return concat_last_layer ? last.out_dim() * last.heads() : last.out_dim();
}

std::vector<std::size_t> default_heads(std::size_t num_classes) {
  return {4, 4, num_classes, num_classes};
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

SgatStackParams init_sgat(const SgatShape& shape, std::mt19937_64& rng) {
  if (shape.heads.empty()) throw ConfigError("SGAT stack needs at least one layer");
  SgatStackParams p;
  p.agg = shape.agg;
  p.concat_last_layer = shape.concat_last_layer;
  std::size_t in = shape.in_dim;
  for (std::size_t h : shape.heads) {
    if (h < 1) throw ConfigError("every SGAT layer needs at least one head");
    SgatLayerParams layer;
    layer.w1 = xavier_uniform({in, shape.hidden_dim}, in, shape.hidden_dim, rng);
    for (std::size_t k = 0; k < h; ++k) {
      layer.attn.push_back(xavier_uniform({shape.hidden_dim, 2}, 2 * shape.hidden_dim, 1, rng));
    }
    p.layers.push_back(std::move(layer));
    in = shape.hidden_dim;
  }
  const std::size_t last = p.last_width();
  p.w2 = xavier_uniform({last, shape.scene_dim}, last, shape.scene_dim, rng);
  return p;
}

void validate(const SgatStackParams& p) {
  if (p.layers.empty()) throw DimensionError("SGAT stack has no layers");
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    if (layer.w1.rank() != 2 || layer.heads() == 0) {
      throw DimensionError(fmt::format("SGAT layer {} is malformed", l));
    }
    for (const auto& a : layer.attn) {
      if (a.shape() != Shape{layer.out_dim(), 2}) {
        throw DimensionError(fmt::format("SGAT layer {}: attention vector {} for D_out = {}", l,
                                         shape_string(a.shape()), layer.out_dim()));
      }
    }
    if (l > 0 && layer.in_dim() != p.layers[l - 1].out_dim()) {
      throw DimensionError(fmt::format("SGAT layer {} reads {} features, layer {} writes {}", l,
                                       layer.in_dim(), l - 1, p.layers[l - 1].out_dim()));
    }
  }
  if (p.w2.rank() != 2 || p.w2.rows() != p.last_width()) {
    throw DimensionError(fmt::format("W2 {} does not match last layer width {}",
                                     shape_string(p.w2.shape()), p.last_width()));
  }
}

SgatStackVars bind(ad::Tape& tape, const SgatStackParams& params, bool requires_grad) {
  SgatStackVars v;
  v.agg = params.agg;
  v.concat_last_layer = params.concat_last_layer;
  for (const auto& layer : params.layers) {
    SgatLayerVars lv;
    lv.w1 = tape.leaf(layer.w1, requires_grad);
    for (const auto& a : layer.attn) lv.attn.push_back(tape.leaf(a, requires_grad));
    v.layers.push_back(std::move(lv));
  }
  v.w2 = tape.leaf(params.w2, requires_grad);
  return v;
}

SgatLayerOutput sgat_layer(ad::Var x, const ad::Mask& mask, const SgatLayerVars& params,
                           double slope, bool concat) {
  SgatLayerOutput out;
  const ad::Var z = ad::matmul(x, params.w1);
  std::vector<ad::Var> heads;
  heads.reserve(params.attn.size());
  for (const ad::Var& a : params.attn) {
    const ad::Var scores = ad::leaky_relu(ad::pairwise_sum(ad::matmul(z, a)), slope);
    const ad::Var alpha = ad::masked_softmax_rows(scores, mask);
    heads.push_back(ad::matmul(alpha, z));
    out.attention.push_back(alpha);
  }
  out.features = concat ? ad::hconcat(heads) : ad::average(heads);
  return out;
}

ad::Var sgat_forward(ad::Tape& tape, const SceneGraph& graph, const SgatStackVars& params,
                     double slope) {
  const std::size_t nodes = graph.num_nodes();
  const ad::Mask mask = attention_mask(nodes, graph.edges);
  ad::Var h = tape.constant(graph.node_features);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const bool last = l + 1 == params.layers.size();
    h = sgat_layer(h, mask, params.layers[l], slope, last && params.concat_last_layer).features;
  }
  const ad::Var pooled = params.agg == AggMode::Aggregated ? ad::mean_rows(h) : ad::row(h, 0);
  return ad::matmul(pooled, params.w2);
}

std::vector<double> sgat_forward(const SceneGraph& graph, const SgatStackParams& params,
                                 double slope) {
  ad::Tape tape;
  const auto vars = bind(tape, params, false);
  const auto& v = sgat_forward(tape, graph, vars, slope).value().values();
  return v;
}

}  // namespace compad
