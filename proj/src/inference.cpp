#include <exception>

#include <omp.h>

#include "compad/training.hpp"

namespace compad {

std::vector<Segment> predict_video(const ModelParams& params, const ModelConfig& config,
                                   const VideoSample& video, const AnchorSet& anchors,
                                   const DecodeOptions& decode_options) {
  std::vector<Segment> out;
  for (const Chunk& chunk : chunk_video(video, config.temporal_len)) {
    ad::Tape tape;
    const ModelVars vars = bind(tape, params, false);
    const TemporalOutput y = forward_chunk(tape, vars, chunk.sample, config);
    auto segs = decode(y.class_probs.value(), y.boundary_probs.value().data(), anchors,
                       chunk.valid_len(), decode_options);
    for (Segment& s : segs) {
      s.start_snippet += chunk.first_snippet;
      s.end_snippet += chunk.first_snippet;
      out.push_back(s);
    }
  }
  return out;
}

std::vector<Detection> predict_dataset(const ModelParams& params, const ModelConfig& config,
                                       const Dataset& dataset, const AnchorSet& anchors,
                                       const DecodeOptions& decode_options, int threads) {
  const auto n = static_cast<std::ptrdiff_t>(dataset.videos.size());
  std::vector<std::vector<Segment>> per_video(dataset.videos.size());
  std::exception_ptr failure;
#pragma omp parallel for num_threads(threads > 1 ? threads : 1) schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      per_video[static_cast<std::size_t>(i)] =
          predict_video(params, config, dataset.videos[static_cast<std::size_t>(i)], anchors,
                        decode_options);
    } catch (...) {
#pragma omp critical(compad_predict_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<Detection> out;
  for (std::size_t i = 0; i < per_video.size(); ++i) {
    for (const Segment& s : per_video[i]) out.push_back({dataset.videos[i].video_id, s});
  }
  return out;
}

}  // namespace compad
