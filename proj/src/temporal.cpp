#include "compad/temporal.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "compad/error.hpp"
#include "compad/scene_graph.hpp"

namespace compad {

double temporal_iou(Interval a, Interval b) {
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  if (lo > hi) return 0.0;
  const double inter = static_cast<double>(hi - lo + 1);
  const double uni = static_cast<double>(a.length() + b.length()) - inter;
  return inter / uni;
}

TemporalGraph build_temporal_graph(std::span<const std::vector<double>> reprs,
                                   std::size_t length, std::size_t scene_dim) {
  if (reprs.size() > length) {
    throw ContractError(fmt::format(
        "{} snippets exceed the temporal graph length {}; split the video with chunk_video",
        reprs.size(), length));
  }
  TemporalGraph g;
  g.valid_len = reprs.size();
  g.features = Tensor(Shape{length, scene_dim});
  for (std::size_t i = 0; i < reprs.size(); ++i) {
    if (reprs[i].size() != scene_dim) {
      throw DimensionError(fmt::format("scene representation {} has {} values, expected {}", i,
                                       reprs[i].size(), scene_dim));
    }
    for (std::size_t d = 0; d < scene_dim; ++d) g.features(i, d) = reprs[i][d];
  }
  return g;
}

ad::Var build_temporal_graph(std::span<const ad::Var> reprs, std::size_t length) {
  if (reprs.size() > length) {
    throw ContractError(fmt::format(
        "{} snippets exceed the temporal graph length {}; split the video with chunk_video",
        reprs.size(), length));
  }
  return ad::stack_rows(reprs, length);
}

std::vector<std::size_t> conv_widths(std::size_t scene_dim) {
  return {scene_dim, std::max<std::size_t>(1, scene_dim / 2),
          std::max<std::size_t>(1, scene_dim / 4)};
}

TemporalParams init_temporal(const TemporalShape& shape, std::mt19937_64& rng) {
  if (shape.kernel_size % 2 == 0) throw ConfigError("temporal kernel size must be odd");
  TemporalParams p;
  std::size_t in = shape.scene_dim;
  for (std::size_t out : conv_widths(shape.scene_dim)) {
    ConvLayerParams layer;
    const std::size_t k = shape.kernel_size;
    layer.kernels = xavier_uniform({out, in, k}, in * k, out * k, rng);
    layer.bias = Tensor(Shape{out});
    p.conv.push_back(std::move(layer));
    in = out;
  }
  const std::size_t outputs = shape.num_classes + 1;
  p.cls_w = xavier_uniform({outputs, in}, in, outputs, rng);
  p.cls_b = Tensor(Shape{outputs});
  p.br_w = xavier_uniform({1, in}, in, 1, rng);
  p.br_b = Tensor(Shape{1});
  return p;
}

void validate(const TemporalParams& p) {
  if (p.conv.size() != 3) throw DimensionError("temporal stack needs three conv layers");
  for (std::size_t l = 0; l < p.conv.size(); ++l) {
    const auto& k = p.conv[l].kernels;
    if (k.rank() != 3 || k.dim(2) % 2 == 0 || p.conv[l].bias.size() != k.dim(0)) {
      throw DimensionError(fmt::format("temporal conv layer {} is malformed ({})", l,
                                       shape_string(k.shape())));
    }
    if (l > 0 && k.dim(1) != p.conv[l - 1].kernels.dim(0)) {
      throw DimensionError(fmt::format("temporal conv layer {} reads {} channels, expected {}",
                                       l, k.dim(1), p.conv[l - 1].kernels.dim(0)));
    }
  }
  const std::size_t last = p.conv.back().kernels.dim(0);
  if (p.cls_w.rank() != 2 || p.cls_w.cols() != last || p.cls_b.size() != p.cls_w.rows() ||
      p.br_w.shape() != Shape{1, last} || p.br_b.size() != 1) {
    throw DimensionError("temporal heads do not match the last conv width");
  }
}

TemporalVars bind(ad::Tape& tape, const TemporalParams& params, bool requires_grad) {
  TemporalVars v;
  for (const auto& c : params.conv) {
    v.conv.push_back({tape.leaf(c.kernels, requires_grad), tape.leaf(c.bias, requires_grad)});
  }
  v.cls_w = tape.leaf(params.cls_w, requires_grad);
  v.cls_b = tape.leaf(params.cls_b, requires_grad);
  v.br_w = tape.leaf(params.br_w, requires_grad);
  v.br_b = tape.leaf(params.br_b, requires_grad);
  return v;
}

TemporalOutput temporal_forward(ad::Var graph, std::size_t valid_len, const TemporalVars& params) {
  ad::Tape& tape = graph.tape();
  const std::size_t n = graph.value().rows();
  if (valid_len > n) {
    throw ContractError(fmt::format("valid_len {} exceeds graph length {}", valid_len, n));
  }
  ad::Var h = ad::transpose(graph);  // channels x N
  for (const auto& c : params.conv) {
    const std::size_t pad = c.kernels.value().dim(2) / 2;
    h = ad::sigmoid(ad::add_col_bias(ad::conv1d(h, c.kernels, 1, pad), c.bias));
  }
  const std::size_t outputs = params.cls_w.value().rows();

  TemporalOutput out;
  out.class_logits = ad::transpose(ad::add_col_bias(ad::matmul(params.cls_w, h), params.cls_b));

  Tensor row_mask(Shape{n});
  Tensor cell_mask(Shape{n, outputs});
  for (std::size_t i = 0; i < valid_len; ++i) {
    row_mask[i] = 1.0;
    for (std::size_t c = 0; c < outputs; ++c) cell_mask(i, c) = 1.0;
  }
  out.class_probs = ad::mul(ad::sigmoid(out.class_logits), tape.constant(std::move(cell_mask)));
  const ad::Var br = ad::reshape(ad::add_col_bias(ad::matmul(params.br_w, h), params.br_b),
                                 Shape{n});
  out.boundary_probs = ad::mul(ad::sigmoid(br), tape.constant(std::move(row_mask)));
  return out;
}

// ---- anchors ------------------------------------------------------------------

std::vector<std::uint8_t> AnchorSet::mask(std::size_t k) const {
  std::vector<std::uint8_t> m(length, 0);
  const Interval w = windows.at(k);
  for (std::size_t i = w.start; i <= w.end; ++i) m[i] = 1;
  return m;
}

std::vector<std::size_t> default_anchor_scales(std::size_t length) {
  std::vector<std::size_t> scales;
  for (std::size_t s = 8; s < length; s *= 2) scales.push_back(s);
  scales.push_back(length);
  return scales;
}

AnchorSet generate_anchors(std::size_t length, std::span<const std::size_t> scales,
                           std::size_t count) {
  if (scales.empty()) throw ConfigError("anchor scales are empty");
  if (length < 1) throw ConfigError("anchor length must be >= 1");
  if (!std::is_sorted(scales.begin(), scales.end())) {
    throw ConfigError("anchor scales must be sorted ascending");
  }
  if (scales.front() < 1 || scales.back() > length) {
    throw ConfigError(fmt::format("anchor scales must lie in [1, {}]", length));
  }
  if (count < scales.size()) {
    throw ConfigError(fmt::format("anchor count {} is below the number of scales {}", count,
                                  scales.size()));
  }

  std::vector<Interval> all;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  auto push = [&](Interval w) {
    if (seen.insert({w.start, w.end}).second) all.push_back(w);
  };
  for (std::size_t s : scales) {
    const std::size_t stride = std::max<std::size_t>(1, s / 2);
    std::size_t start = 0;
    for (; start + s <= length; start += stride) push({start, start + s - 1});
    if (start - stride + s < length) push({start, length - 1});
  }

  AnchorSet set;
  set.length = length;
  if (all.size() <= count) {
    set.windows = std::move(all);
  } else {
    set.windows.reserve(count);
    for (std::size_t i = 0; i < count; ++i) set.windows.push_back(all[i * all.size() / count]);
  }
  return set;
}

AnchorMatch match_anchors(const AnchorSet& anchors,
                          std::span<const GroundTruthSegment> ground_truth,
                          double positive_iou, double negative_iou) {
  if (anchors.size() == 0) throw ContractError("match_anchors: empty anchor set");
  AnchorMatch m;
  m.max_iou.assign(anchors.size(), 0.0);
  m.label.assign(anchors.size(), 0);
  m.boundary_target.assign(anchors.length, 0.0);

  for (const auto& g : ground_truth) {
    const Interval gi{g.start_snippet, g.end_snippet};
    std::size_t best = 0;
    double best_iou = -1.0;
    for (std::size_t k = 0; k < anchors.size(); ++k) {
      const double iou = temporal_iou(anchors.windows[k], gi);
      m.max_iou[k] = std::max(m.max_iou[k], iou);
      if (iou > best_iou) {
        best_iou = iou;
        best = k;
      }
    }
    m.best_anchor.push_back(best);
    m.best_iou.push_back(best_iou);
    for (std::size_t i = g.start_snippet; i <= g.end_snippet && i < anchors.length; ++i) {
      m.boundary_target[i] = 1.0;
    }
  }
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    if (m.max_iou[k] >= positive_iou) {
      m.label[k] = 1;
    } else if (m.max_iou[k] < negative_iou) {
      m.label[k] = 0;
    } else {
      m.label[k] = -1;
    }
  }
  for (std::size_t k : m.best_anchor) m.label[k] = 1;
  return m;
}

// ---- decoding -----------------------------------------------------------------

std::string_view to_string(AnchorScoring s) {
  return s == AnchorScoring::Mean ? "mean" : "run-iou";
}

AnchorScoring parse_anchor_scoring(std::string_view name) {
  if (name == "mean") return AnchorScoring::Mean;
  if (name == "run-iou") return AnchorScoring::RunIou;
  throw ConfigError(fmt::format("unknown anchor scoring '{}', expected one of {{mean, run-iou}}",
                                name));
}

double anchor_score(std::span<const double> boundary_probs, Interval w, std::size_t valid_len,
                    AnchorScoring scoring) {
  double inside = 0.0;
  for (std::size_t i = w.start; i <= w.end; ++i) inside += boundary_probs[i];
  inside /= static_cast<double>(w.length());
  if (scoring == AnchorScoring::Mean) return inside;

  // foreground runs continuing past either edge count against the anchor
  double outside = 0.0;
  for (std::size_t i = w.start; i-- > 0 && boundary_probs[i] >= 0.5;) outside += boundary_probs[i];
  for (std::size_t i = w.end + 1; i < valid_len && boundary_probs[i] >= 0.5; ++i) {
    outside += boundary_probs[i];
  }
  const double len = static_cast<double>(w.length());
  return inside * len / (len + outside);
}

std::vector<std::size_t> greedy_nms(std::span<const Segment> ranked, double nms_iou,
                                    std::size_t top_k) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < ranked.size() && kept.size() < top_k; ++i) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return ranked[k].activity_class == ranked[i].activity_class &&
             temporal_iou(ranked[k].interval(), ranked[i].interval()) >= nms_iou;
    });
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

std::vector<Segment> decode(const Tensor& class_probs, std::span<const double> boundary_probs,
                            const AnchorSet& anchors, std::size_t valid_len,
                            const DecodeOptions& options) {
  if (!(options.nms_iou > 0.0 && options.nms_iou <= 1.0)) {
    throw ConfigError("decode: nms_iou must lie in (0, 1]");
  }
  if (options.top_k < 1) throw ConfigError("decode: top_k must be >= 1");
  if (valid_len == 0) return {};
  if (class_probs.rows() < valid_len || boundary_probs.size() < valid_len) {
    throw DimensionError("decode: predictions shorter than valid_len");
  }
  const std::size_t classes = class_probs.cols() - 1;

  std::vector<Segment> candidates;
  for (const Interval& a : anchors.windows) {
    if (a.start >= valid_len) continue;
    const Interval w{a.start, std::min(a.end, valid_len - 1)};
    const double score = anchor_score(boundary_probs, w, valid_len, options.scoring);
    for (std::size_t c = 0; c < classes; ++c) {
      double mean_prob = 0.0;
      for (std::size_t i = w.start; i <= w.end; ++i) mean_prob += class_probs(i, c);
      mean_prob /= static_cast<double>(w.length());
      candidates.push_back({static_cast<int>(c), w.start, w.end,
                            std::clamp(score * mean_prob, 0.0, 1.0)});
    }
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].score > candidates[b].score;
  });
  std::vector<Segment> ranked;
  ranked.reserve(order.size());
  for (std::size_t i : order) ranked.push_back(candidates[i]);

  std::vector<Segment> out;
  for (std::size_t i : greedy_nms(ranked, options.nms_iou, options.top_k)) {
    out.push_back(ranked[i]);
  }
  return out;
}

}  // namespace compad
