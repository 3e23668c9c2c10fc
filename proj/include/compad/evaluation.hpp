#pragma once

// Temporal detection metrics: per-class average precision at an IoU
// threshold, mAP per threshold and the average over a protocol's thresholds.

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "compad/temporal.hpp"

namespace compad {

struct EvalProtocol {
  std::string name = "custom";
  std::vector<double> iou_thresholds;
  bool multi_label = false;
};

// road, thumos14, activitynet13 (0.5, 0.75, 0.95) and activitynet13-full
// (0.5:0.05:0.95). Throws ConfigError for anything else.
EvalProtocol protocol_preset(std::string_view name);
// Thresholds must be strictly increasing within (0, 1].
void validate(const EvalProtocol& protocol);

struct Detection {
  std::string video_id;
  Segment segment;
};

struct GroundTruthInstance {
  std::string video_id;
  int activity_class = 0;
  Interval interval;
};

// Flattens per-video ground truth.
std::vector<GroundTruthInstance> collect_ground_truth(std::span<const VideoSample> videos);

// All-points interpolated AP for `activity_class` at IoU threshold `tau`.
// Predictions are ranked by descending score (ties: earlier start, then
// lower video id); each one claims the unmatched same-video GT of its class
// with the highest IoU when that IoU >= tau. Returns 0 when the class has
// GT but no predictions and -1 when it has no GT at all.
double average_precision(std::span<const Detection> predictions,
                         std::span<const GroundTruthInstance> ground_truth, int activity_class,
                         double tau);

struct EvalResult {
  EvalProtocol protocol;
  std::vector<int> classes;                     // classes with >= 1 GT instance
  std::map<int, std::vector<double>> per_class;  // class -> AP per threshold
  std::vector<double> map;                      // per threshold
  double avg_map = 0.0;
};

// Throws DomainError when there is no ground truth at all.
EvalResult mean_ap(std::span<const Detection> predictions,
                   std::span<const GroundTruthInstance> ground_truth,
                   const EvalProtocol& protocol);

// {"protocol", "thresholds", "per_class": {name: {tau: ap}}, "map": {tau: v},
//  "avg_map"}. Deterministic output.
std::string eval_result_json(const EvalResult& result,
                             std::span<const std::string> class_names);
// Header "protocol,<tau>...,avg" and one row of mAP percentages.
std::string eval_result_csv(const EvalResult& result);
// One-line table row of mAP fractions, e.g. "road | 0.1: 0.81 ... | Avg 0.74".
std::string eval_result_row(const EvalResult& result);

// Threshold key as used in the JSON and CSV outputs ("0.1", "0.75").
std::string threshold_key(double tau);

}  // namespace compad
