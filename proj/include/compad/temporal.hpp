#pragma once

// Global temporal graph over per-snippet scene representations: three 1D
// convolutions with sigmoid activations, per-snippet class and boundary
// heads, fixed anchor masks and decoding into scored segments.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "compad/autodiff.hpp"
#include "compad/scene_data.hpp"
#include "compad/tensor.hpp"

namespace compad {

// Inclusive snippet range.
struct Interval {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

// |a ∩ b| / |a ∪ b| counted in snippets.
double temporal_iou(Interval a, Interval b);

struct TemporalGraph {
  Tensor features;  // N x D_scene; rows >= valid_len are zero
  std::size_t valid_len = 0;

  std::size_t length() const { return features.rows(); }
};

// Throws ContractError when reprs.size() > length; chunk the video first.
TemporalGraph build_temporal_graph(std::span<const std::vector<double>> reprs,
                                   std::size_t length, std::size_t scene_dim);
// Differentiable variant: stacks [1 x D] rows into [N x D].
ad::Var build_temporal_graph(std::span<const ad::Var> reprs, std::size_t length);

struct ConvLayerParams {
  Tensor kernels;  // C_out x C_in x K
  Tensor bias;     // C_out
};

struct TemporalParams {
  std::vector<ConvLayerParams> conv;  // three layers
  Tensor cls_w;                       // (C + 1) x C_last
  Tensor cls_b;                       // C + 1
  Tensor br_w;                        // 1 x C_last
  Tensor br_b;                        // 1

  std::size_t num_outputs() const { return cls_w.rows(); }
};

struct TemporalShape {
  std::size_t scene_dim = 32;
  std::size_t num_classes = 3;  // C; heads emit C + 1 (background last)
  std::size_t kernel_size = 3;
};

// Widths [D, D/2, D/4] (at least 1), odd kernels with same-length padding.
std::vector<std::size_t> conv_widths(std::size_t scene_dim);
TemporalParams init_temporal(const TemporalShape& shape, std::mt19937_64& rng);
void validate(const TemporalParams& params);

struct TemporalVars {
  struct Conv {
    ad::Var kernels;
    ad::Var bias;
  };
  std::vector<Conv> conv;
  ad::Var cls_w, cls_b, br_w, br_b;
};

TemporalVars bind(ad::Tape& tape, const TemporalParams& params, bool requires_grad);

struct TemporalOutput {
  ad::Var class_logits;    // N x (C + 1)
  ad::Var class_probs;     // N x (C + 1), zero at positions >= valid_len
  ad::Var boundary_probs;  // N, zero at positions >= valid_len
};

// graph: [N x D_scene].
TemporalOutput temporal_forward(ad::Var graph, std::size_t valid_len,
                                const TemporalVars& params);

// ---- anchors ------------------------------------------------------------------

struct AnchorSet {
  std::size_t length = 0;  // N
  std::vector<Interval> windows;

  std::size_t size() const { return windows.size(); }
  // Binary mask of anchor k over [0, N).
  std::vector<std::uint8_t> mask(std::size_t k) const;
};

// Powers of two from 8 below N, then N itself (N alone when N <= 8).
std::vector<std::size_t> default_anchor_scales(std::size_t length);

// Windows [k * stride, k * stride + s - 1] with stride max(1, s / 2) for each
// scale s, scale-major. When the last full window stops short of N - 1 a
// final window clipped to N is added. Duplicates are dropped; more than
// `count` windows are subsampled by uniform index striding.
AnchorSet generate_anchors(std::size_t length, std::span<const std::size_t> scales,
                           std::size_t count);

struct AnchorMatch {
  std::vector<std::size_t> best_anchor;  // per GT segment
  std::vector<double> best_iou;          // per GT segment
  std::vector<double> max_iou;           // per anchor, over all GT
  std::vector<std::int8_t> label;        // per anchor: 1 positive, 0 negative, -1 ignored
  std::vector<double> boundary_target;   // per snippet (N): union of GT masks
};

AnchorMatch match_anchors(const AnchorSet& anchors,
                          std::span<const GroundTruthSegment> ground_truth,
                          double positive_iou = 0.7, double negative_iou = 0.3);

// ---- decoding -----------------------------------------------------------------

struct Segment {
  int activity_class = 0;
  std::size_t start_snippet = 0;
  std::size_t end_snippet = 0;
  double score = 0.0;

  Interval interval() const { return {start_snippet, end_snippet}; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

enum class AnchorScoring {
  // Mean boundary probability inside the anchor.
  Mean,
  // Estimated IoU between the anchor and the foreground it touches: the
  // inside sum over the anchor length plus the sum of the p >= 0.5 runs
  // continuing past either edge. Exact IoU for a binary boundary vector.
  RunIou,
};

std::string_view to_string(AnchorScoring s);
AnchorScoring parse_anchor_scoring(std::string_view name);

struct DecodeOptions {
  double nms_iou = 0.5;
  std::size_t top_k = 100;
  AnchorScoring scoring = AnchorScoring::RunIou;
};

// Score of anchor `window` (already clipped to valid_len) under `scoring`.
double anchor_score(std::span<const double> boundary_probs, Interval window,
                    std::size_t valid_len, AnchorScoring scoring);

// class_probs: N x (C + 1), background last and never emitted.
std::vector<Segment> decode(const Tensor& class_probs, std::span<const double> boundary_probs,
                            const AnchorSet& anchors, std::size_t valid_len,
                            const DecodeOptions& options);

// Greedy class-wise NMS over candidates already in rank order: a candidate is
// kept unless a kept candidate of its class overlaps it with IoU >= nms_iou.
// Stops after top_k kept. Returns indices into `ranked`.
std::vector<std::size_t> greedy_nms(std::span<const Segment> ranked, double nms_iou,
                                    std::size_t top_k);

}  // namespace compad
