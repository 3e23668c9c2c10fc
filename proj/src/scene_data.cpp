#include "compad/scene_data.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/format.h>

#include "compad/error.hpp"

namespace compad {

void validate(const Dataset& ds) {
  if (ds.activity_class_names.size() != ds.num_activity_classes) {
    throw ConfigError(fmt::format("{} activity class names for {} classes",
                                  ds.activity_class_names.size(),
                                  ds.num_activity_classes));
  }
  if (ds.agent_class_names.size() != ds.num_agent_classes) {
    throw ConfigError(fmt::format("{} agent class names for {} agent classes",
                                  ds.agent_class_names.size(), ds.num_agent_classes));
  }
  for (const VideoSample& v : ds.videos) {
    for (std::size_t i = 0; i < v.snippets.size(); ++i) {
      const Snippet& s = v.snippets[i];
      if (s.index != i) {
        throw ConfigError(fmt::format("video {}: snippet {} carries index {}",
                                      v.video_id, i, s.index));
      }
      if (s.scene_feature.size() != ds.feature_dim) {
        throw ConfigError(fmt::format("video {}: snippet {} scene feature has {} values, D = {}",
                                      v.video_id, i, s.scene_feature.size(),
                                      ds.feature_dim));
      }
      std::set<int> ids;
      for (const AgentTube& a : s.agents) {
        if (!ids.insert(a.tube_id).second) {
          throw ConfigError(fmt::format("video {}: snippet {} repeats tube id {}",
                                        v.video_id, i, a.tube_id));
        }
        if (a.feature.size() != ds.feature_dim) {
          throw ConfigError(fmt::format("video {}: snippet {} tube {} has {} values, D = {}",
                                        v.video_id, i, a.tube_id, a.feature.size(),
                                        ds.feature_dim));
        }
        if (a.agent_class < 0 ||
            static_cast<std::size_t>(a.agent_class) >= ds.num_agent_classes) {
          throw ConfigError(fmt::format("video {}: snippet {} tube {} has agent class {}",
                                        v.video_id, i, a.tube_id, a.agent_class));
        }
        if (a.tube_length < 1 ||
            (ds.snippet_len > 0 &&
             static_cast<std::size_t>(a.tube_length) > ds.snippet_len)) {
          throw ConfigError(fmt::format("video {}: snippet {} tube {} has length {}",
                                        v.video_id, i, a.tube_id, a.tube_length));
        }
      }
    }
    for (const GroundTruthSegment& g : v.ground_truth) {
      if (g.activity_class < 0 ||
          static_cast<std::size_t>(g.activity_class) >= ds.num_activity_classes ||
          g.start_snippet > g.end_snippet || g.end_snippet >= v.snippets.size()) {
        throw ConfigError(fmt::format("video {}: invalid segment [{}, {}] of class {}",
                                      v.video_id, g.start_snippet, g.end_snippet,
                                      g.activity_class));
      }
    }
    if (!ds.multi_label) {
      const auto mask_sum = [&] {
        std::vector<int> count(v.snippets.size(), 0);
        for (const auto& g : v.ground_truth) {
          for (auto i = g.start_snippet; i <= g.end_snippet; ++i) ++count[i];
        }
        return std::any_of(count.begin(), count.end(), [](int c) { return c > 1; });
      };
      if (mask_sum()) {
        throw ConfigError(fmt::format(
            "video {}: overlapping segments in a single-label dataset", v.video_id));
      }
    }
  }
}

std::vector<std::uint8_t> ground_truth_mask(const VideoSample& video,
                                            int activity_class) {
  std::vector<std::uint8_t> mask(video.snippets.size(), 0);
  for (const auto& g : video.ground_truth) {
    if (activity_class >= 0 && g.activity_class != activity_class) continue;
    for (auto i = g.start_snippet; i <= g.end_snippet && i < mask.size(); ++i) mask[i] = 1;
  }
  return mask;
}

std::vector<Chunk> chunk_video(const VideoSample& video, std::size_t length) {
  if (length < 1) throw ConfigError("chunk length must be >= 1");
  std::vector<Chunk> chunks;
  const std::size_t total = video.snippets.size();
  for (std::size_t first = 0, idx = 0; first < total; first += length, ++idx) {
    const std::size_t len = std::min(length, total - first);
    const std::size_t last = first + len - 1;
    Chunk c;
    c.chunk_index = idx;
    c.first_snippet = first;
    c.sample.video_id = video.video_id;
    c.sample.snippets.assign(video.snippets.begin() + static_cast<std::ptrdiff_t>(first),
                             video.snippets.begin() + static_cast<std::ptrdiff_t>(first + len));
    for (std::size_t i = 0; i < len; ++i) c.sample.snippets[i].index = i;
    for (const auto& g : video.ground_truth) {
      if (g.end_snippet < first || g.start_snippet > last) continue;
      c.sample.ground_truth.push_back(
          {g.activity_class, std::max(g.start_snippet, first) - first,
           std::min(g.end_snippet, last) - first});
    }
    chunks.push_back(std::move(c));
  }
  return chunks;
}

void quantize_features(Dataset& dataset) {
  auto q = [](std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  };
  for (auto& video : dataset.videos) {
    for (auto& s : video.snippets) {
      q(s.scene_feature);
      for (auto& a : s.agents) q(a.feature);
    }
  }
}

// ---- synthetic generator ----------------------------------------------------

void validate(const SynthConfig& c) {
  if (c.num_videos < 1) throw ConfigError("synth: need at least one video");
  if (c.num_classes < 2) throw ConfigError("synth: need at least two activity classes");
  if (c.feature_dim < 4) throw ConfigError("synth: feature_dim must be >= 4");
  if (c.min_snippets > c.max_snippets || c.min_segments > c.max_segments ||
      c.min_segment_len > c.max_segment_len || c.min_agents > c.max_agents) {
    throw ConfigError("synth: a min bound exceeds its max bound");
  }
  if (c.min_segments < 1 || c.min_segment_len < 1) {
    throw ConfigError("synth: segments must number and span at least one");
  }
  if (c.snippet_len < 1) throw ConfigError("synth: snippet_len must be >= 1");
  if (c.max_agents > 0 && c.num_agent_classes < 1) {
    throw ConfigError("synth: agents need at least one agent class");
  }
  if (!(c.class_separation >= 0.0)) throw ConfigError("synth: negative class separation");
  if (c.background) {
    const std::size_t need =
        c.min_segments * c.min_segment_len + (c.min_segments + 1) * c.min_gap;
    if (need > c.min_snippets) {
      throw ConfigError(fmt::format(
          "synth: {} segment(s) of length {} with gaps of {} need {} snippets, "
          "videos may have only {}",
          c.min_segments, c.min_segment_len, c.min_gap, need, c.min_snippets));
    }
  }
}

namespace {

using Rng = std::mt19937_64;

std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::vector<double> random_direction(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

// Lays out segments (start, length) for a video of `total` snippets.
std::vector<std::pair<std::size_t, std::size_t>> place_segments(
    const SynthConfig& c, Rng& rng, std::size_t total) {
  std::size_t k = uniform_size(rng, c.min_segments, c.max_segments);
  std::vector<std::size_t> lengths(k);
  for (auto& l : lengths) l = uniform_size(rng, c.min_segment_len, c.max_segment_len);
  auto need = [&] {
    std::size_t s = (lengths.size() + 1) * c.min_gap;
    for (auto l : lengths) s += l;
    return s;
  };
  while (need() > total && lengths.size() > c.min_segments) lengths.pop_back();
  if (need() > total) std::fill(lengths.begin(), lengths.end(), c.min_segment_len);
  k = lengths.size();

  const std::size_t slack = total - need();
  std::vector<std::size_t> cuts(k);
  for (auto& x : cuts) x = uniform_size(rng, 0, slack);
  std::sort(cuts.begin(), cuts.end());

  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t pos = 0, prev_cut = 0;
  for (std::size_t s = 0; s < k; ++s) {
    pos += c.min_gap + (cuts[s] - prev_cut);
    prev_cut = cuts[s];
    out.emplace_back(pos, lengths[s]);
    pos += lengths[s];
  }
  return out;
}

}  // namespace

Dataset synth_generate(const SynthConfig& c, std::uint64_t seed) {
  validate(c);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset ds;
  ds.feature_dim = c.feature_dim;
  ds.num_activity_classes = c.num_classes;
  ds.num_agent_classes = c.num_agent_classes;
  ds.snippet_len = c.snippet_len;
  for (std::size_t i = 0; i < c.num_classes; ++i) {
    ds.activity_class_names.push_back(fmt::format("activity_{}", i));
  }
  for (std::size_t i = 0; i < c.num_agent_classes; ++i) {
    ds.agent_class_names.push_back(fmt::format("agent_{}", i));
  }

  std::vector<std::vector<double>> class_dirs, agent_dirs;
  for (std::size_t i = 0; i < c.num_classes; ++i) {
    class_dirs.push_back(random_direction(rng, c.feature_dim));
  }
  for (std::size_t i = 0; i < c.num_agent_classes; ++i) {
    agent_dirs.push_back(random_direction(rng, c.feature_dim));
  }

  for (std::size_t vi = 0; vi < c.num_videos; ++vi) {
    VideoSample video;
    video.video_id = fmt::format("synth_{:04d}", vi);

    std::vector<std::pair<std::size_t, std::size_t>> layout;
    std::size_t total = 0;
    if (c.background) {
      total = uniform_size(rng, c.min_snippets, c.max_snippets);
      layout = place_segments(c, rng, total);
    } else {
      const std::size_t k = uniform_size(rng, c.min_segments, c.max_segments);
      for (std::size_t s = 0; s < k; ++s) {
        const std::size_t len = uniform_size(rng, c.min_segment_len, c.max_segment_len);
        layout.emplace_back(total, len);
        total += len;
      }
    }

    std::vector<int> label(total, -1);
    for (const auto& [start, len] : layout) {
      const int cls = static_cast<int>(uniform_size(rng, 0, c.num_classes - 1));
      video.ground_truth.push_back({cls, start, start + len - 1});
      for (std::size_t i = start; i < start + len; ++i) label[i] = cls;
    }

    video.snippets.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
      Snippet& s = video.snippets[i];
      s.index = i;
      s.scene_feature.resize(c.feature_dim);
      for (std::size_t d = 0; d < c.feature_dim; ++d) {
        const double mean =
            label[i] >= 0 ? c.class_separation * class_dirs[static_cast<std::size_t>(label[i])][d]
                          : 0.0;
        s.scene_feature[d] = mean + normal(rng);
      }
      const std::size_t n_agents = uniform_size(rng, c.min_agents, c.max_agents);
      for (std::size_t a = 0; a < n_agents; ++a) {
        AgentTube tube;
        tube.tube_id = static_cast<int>(a);
        tube.agent_class = static_cast<int>(uniform_size(rng, 0, c.num_agent_classes - 1));
        tube.tube_length = static_cast<int>(uniform_size(rng, 1, c.snippet_len));
        tube.feature.resize(c.feature_dim);
        const auto& type_dir = agent_dirs[static_cast<std::size_t>(tube.agent_class)];
        for (std::size_t d = 0; d < c.feature_dim; ++d) {
          double mean = c.agent_type_signal * type_dir[d];
          if (label[i] >= 0) {
            mean += c.agent_class_signal * c.class_separation *
                    class_dirs[static_cast<std::size_t>(label[i])][d];
          }
          tube.feature[d] = mean + normal(rng);
        }
        s.agents.push_back(std::move(tube));
      }
    }
    ds.videos.push_back(std::move(video));
  }
  quantize_features(ds);
  return ds;
}

}  // namespace compad
