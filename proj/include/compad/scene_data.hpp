#pragma once

// Snippet/agent-tube data model, the CADF on-disk format, video chunking and
// the synthetic dataset generator that stands in for detection, tracking and
// 3D feature extraction.
//
// CADF layout
//   manifest.json  UTF-8 JSON: {"magic": "CADF", "version": 1,
//                  "feature_dim", "num_activity_classes", "num_agent_classes",
//                  "activity_classes": [..], "agent_classes": [..],
//                  "snippet_len", "multi_label",
//                  "videos": [{"id", "num_snippets", "gt": [[class, start, end]..],
//                              "agents_per_snippet": [..], "offset"}]}
//   features.bin   little-endian. Header: "CADF", u32 version, u32 feature_dim,
//                  u32 video count. Then, per video and per snippet: D f32
//                  scene values, then per agent u32 agent_class,
//                  u32 tube_length, D f32 values. "offset" is the byte offset
//                  of a video's first snippet.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace compad {

struct AgentTube {
  int tube_id = 0;
  int agent_class = 0;
  std::vector<double> feature;
  int tube_length = 1;

  friend bool operator==(const AgentTube&, const AgentTube&) = default;
};

struct Snippet {
  std::size_t index = 0;
  std::vector<double> scene_feature;
  std::vector<AgentTube> agents;

  friend bool operator==(const Snippet&, const Snippet&) = default;
};

struct GroundTruthSegment {
  int activity_class = 0;
  std::size_t start_snippet = 0;  // inclusive
  std::size_t end_snippet = 0;    // inclusive

  friend bool operator==(const GroundTruthSegment&,
                         const GroundTruthSegment&) = default;
};

struct VideoSample {
  std::string video_id;
  std::vector<Snippet> snippets;
  std::vector<GroundTruthSegment> ground_truth;

  friend bool operator==(const VideoSample&, const VideoSample&) = default;
};

struct Dataset {
  std::size_t feature_dim = 0;
  std::size_t num_activity_classes = 0;
  std::size_t num_agent_classes = 0;
  std::vector<std::string> activity_class_names;
  std::vector<std::string> agent_class_names;
  // Frames per snippet; 0 when unknown. Bounds AgentTube::tube_length.
  std::size_t snippet_len = 0;
  bool multi_label = false;
  std::vector<VideoSample> videos;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Throws ConfigError describing the first violated invariant.
void validate(const Dataset& dataset);

// Per-snippet mask of class membership: mask[i] = 1 iff snippet i lies in
// some ground-truth segment of `activity_class` (any class when < 0).
std::vector<std::uint8_t> ground_truth_mask(const VideoSample& video,
                                            int activity_class = -1);

// ---- CADF I/O ---------------------------------------------------------------

inline constexpr std::uint32_t kCadfVersion = 1;

// `path` names the manifest; features.bin is written next to it.
void save_dataset(const Dataset& dataset, const std::filesystem::path& manifest_path);
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Bytes of features.bin for the given dataset (header included).
std::size_t cadf_payload_size(const Dataset& dataset);

// Rounds every feature value to single precision, the storage precision.
void quantize_features(Dataset& dataset);

// ---- chunking -----------------------------------------------------------------

struct Chunk {
  VideoSample sample;  // snippets re-indexed from 0, GT clipped and re-indexed
  std::size_t chunk_index = 0;
  std::size_t first_snippet = 0;  // index of sample.snippets[0] in the source

  std::size_t valid_len() const { return sample.snippets.size(); }
};

// Consecutive, non-overlapping chunks of at most `length` snippets. A video
// with no snippets yields no chunks.
std::vector<Chunk> chunk_video(const VideoSample& video, std::size_t length);

// ---- synthetic generator ----------------------------------------------------

struct SynthConfig {
  std::size_t num_videos = 20;
  std::size_t num_classes = 3;
  std::size_t feature_dim = 64;
  std::size_t num_agent_classes = 6;
  std::size_t min_snippets = 96;
  std::size_t max_snippets = 128;
  std::size_t min_segments = 1;
  std::size_t max_segments = 3;
  std::size_t min_segment_len = 10;
  std::size_t max_segment_len = 40;
  // Minimum background run between (and around) segments.
  std::size_t min_gap = 2;
  // false: segments tile the whole video (no background snippets).
  bool background = true;
  // Distance of each class mean from the background mean.
  double class_separation = 3.0;
  // Scale of the class signal carried by agent tubes, relative to
  // class_separation.
  double agent_class_signal = 0.5;
  double agent_type_signal = 1.0;
  std::size_t min_agents = 0;
  std::size_t max_agents = 5;
  std::size_t snippet_len = 24;
};

void validate(const SynthConfig& config);

// Deterministic in (config, seed). Features are quantized to single precision
// so that save/load round-trips exactly.
Dataset synth_generate(const SynthConfig& config, std::uint64_t seed);

}  // namespace compad
