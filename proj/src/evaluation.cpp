#include "compad/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "compad/error.hpp"

namespace compad {

EvalProtocol protocol_preset(std::string_view name) {
  if (name == "road") return {"road", {0.1, 0.2, 0.3, 0.4, 0.5}, true};
  if (name == "thumos14") return {"thumos14", {0.3, 0.4, 0.5, 0.6, 0.7}, false};
  if (name == "activitynet13") return {"activitynet13", {0.5, 0.75, 0.95}, false};
  if (name == "activitynet13-full") {
    EvalProtocol p{"activitynet13-full", {}, false};
    for (int i = 0; i <= 9; ++i) p.iou_thresholds.push_back((50 + 5 * i) / 100.0);
    return p;
  }
  throw ConfigError(fmt::format(
      "unknown protocol '{}', expected one of {{road, thumos14, activitynet13, "
      "activitynet13-full, custom}}",
      name));
}

void validate(const EvalProtocol& p) {
  if (p.iou_thresholds.empty()) throw ConfigError("protocol has no IoU thresholds");
  for (std::size_t i = 0; i < p.iou_thresholds.size(); ++i) {
    const double t = p.iou_thresholds[i];
    if (!(t > 0.0 && t <= 1.0)) {
      throw ConfigError(fmt::format("IoU threshold {} outside (0, 1]", t));
    }
    if (i > 0 && !(t > p.iou_thresholds[i - 1])) {
      throw ConfigError("IoU thresholds must be strictly increasing");
    }
  }
}

std::vector<GroundTruthInstance> collect_ground_truth(std::span<const VideoSample> videos) {
  std::vector<GroundTruthInstance> out;
  for (const auto& v : videos) {
    for (const auto& g : v.ground_truth) {
      out.push_back({v.video_id, g.activity_class, {g.start_snippet, g.end_snippet}});
    }
  }
  return out;
}

double average_precision(std::span<const Detection> predictions,
                         std::span<const GroundTruthInstance> ground_truth, int activity_class,
                         double tau) {
  std::vector<std::size_t> gts;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    if (ground_truth[i].activity_class == activity_class) gts.push_back(i);
  }
  if (gts.empty()) return -1.0;

  std::vector<const Detection*> preds;
  for (const auto& p : predictions) {
    if (p.segment.activity_class == activity_class) preds.push_back(&p);
  }
  std::stable_sort(preds.begin(), preds.end(), [](const Detection* a, const Detection* b) {
    if (a->segment.score != b->segment.score) return a->segment.score > b->segment.score;
    if (a->segment.start_snippet != b->segment.start_snippet) {
      return a->segment.start_snippet < b->segment.start_snippet;
    }
    return a->video_id < b->video_id;
  });

  std::vector<bool> matched(gts.size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const Detection& p = *preds[k];
    std::size_t best = gts.size();
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const auto& gt = ground_truth[gts[g]];
      if (matched[g] || gt.video_id != p.video_id) continue;
      const double iou = temporal_iou(p.segment.interval(), gt.interval);
      if (iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    if (best < gts.size() && best_iou >= tau) {
      matched[best] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }

  // Precision envelope, then area under the step curve.
  for (std::size_t k = precision.size(); k-- > 1;) {
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

EvalResult mean_ap(std::span<const Detection> predictions,
                   std::span<const GroundTruthInstance> ground_truth,
                   const EvalProtocol& protocol) {
  validate(protocol);
  EvalResult r;
  r.protocol = protocol;
  for (const auto& g : ground_truth) r.classes.push_back(g.activity_class);
  std::sort(r.classes.begin(), r.classes.end());
  r.classes.erase(std::unique(r.classes.begin(), r.classes.end()), r.classes.end());
  if (r.classes.empty()) throw DomainError("mAP is undefined without ground truth");

  r.map.assign(protocol.iou_thresholds.size(), 0.0);
  for (int c : r.classes) {
    auto& aps = r.per_class[c];
    for (std::size_t t = 0; t < protocol.iou_thresholds.size(); ++t) {
      aps.push_back(average_precision(predictions, ground_truth, c, protocol.iou_thresholds[t]));
      r.map[t] += aps.back();
    }
  }
  for (double& m : r.map) m /= static_cast<double>(r.classes.size());
  r.avg_map = std::accumulate(r.map.begin(), r.map.end(), 0.0) /
              static_cast<double>(r.map.size());
  return r;
}

std::string threshold_key(double tau) { return fmt::format("{:g}", tau); }

std::string eval_result_json(const EvalResult& r, std::span<const std::string> class_names) {
  nlohmann::ordered_json j;
  j["protocol"] = r.protocol.name;
  j["thresholds"] = r.protocol.iou_thresholds;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (int c : r.classes) {
    const std::string name = static_cast<std::size_t>(c) < class_names.size()
                                 ? class_names[static_cast<std::size_t>(c)]
                                 : std::to_string(c);
    nlohmann::ordered_json row = nlohmann::ordered_json::object();
    for (std::size_t t = 0; t < r.protocol.iou_thresholds.size(); ++t) {
      row[threshold_key(r.protocol.iou_thresholds[t])] = r.per_class.at(c)[t];
    }
    per_class[name] = row;
  }
  j["per_class"] = per_class;
  nlohmann::ordered_json map = nlohmann::ordered_json::object();
  for (std::size_t t = 0; t < r.protocol.iou_thresholds.size(); ++t) {
    map[threshold_key(r.protocol.iou_thresholds[t])] = r.map[t];
  }
  j["map"] = map;
  j["avg_map"] = r.avg_map;
  return j.dump(2) + "\n";
}

std::string eval_result_csv(const EvalResult& r) {
  std::string header = "protocol";
  std::string row = r.protocol.name;
  for (std::size_t t = 0; t < r.map.size(); ++t) {
    header += "," + threshold_key(r.protocol.iou_thresholds[t]);
    row += fmt::format(",{:.2f}", 100.0 * r.map[t]);
  }
  return header + ",avg\n" + row + fmt::format(",{:.2f}\n", 100.0 * r.avg_map);
}

std::string eval_result_row(const EvalResult& r) {
  std::string out = r.protocol.name + " |";
  for (std::size_t t = 0; t < r.map.size(); ++t) {
    out += fmt::format(" {}: {:.2f}", threshold_key(r.protocol.iou_thresholds[t]), r.map[t]);
  }
  return out + fmt::format(" | Avg {:.2f}", r.avg_map);
}

}  // namespace compad
