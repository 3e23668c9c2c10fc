#pragma once

// Losses, the Adam optimizer, checkpoints and the training loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "compad/autodiff.hpp"
#include "compad/error.hpp"
#include "compad/evaluation.hpp"
#include "compad/model.hpp"
#include "compad/scene_data.hpp"
#include "compad/temporal.hpp"

namespace compad {

// ---- losses -------------------------------------------------------------------

inline constexpr double kProbClamp = 1e-7;

// Mean over positions i < valid_len of
//   -w_i [y_i log p_i + (1 - y_i) log(1 - p_i)],  p clamped to [1e-7, 1 - 1e-7].
// Empty `weights` means w = 1. valid_len == 0 gives 0 with zero gradient.
ad::Var boundary_loss(ad::Var pred, std::span<const double> target,
                      std::span<const double> weights, std::size_t valid_len);

// Weighted BCE-with-logits, mean over rows i < valid_len and all columns c:
//   -w_ic [p_c y_ic log s(x_ic) + (1 - y_ic) log(1 - s(x_ic))]
// evaluated through softplus, so it is stable for any finite logit. Empty
// `pos_weight` / `weights` mean all ones.
ad::Var activity_loss(ad::Var logits, const Tensor& targets, std::span<const double> pos_weight,
                      const Tensor* weights, std::size_t valid_len);

// lambda * l_act + l_br
ad::Var total_loss(ad::Var l_act, ad::Var l_br, double lambda);

// N x (C + 1) per-snippet targets: column c is set inside a class-c segment,
// column C (background) inside none. Rows >= valid length stay zero.
Tensor activity_targets(const VideoSample& chunk, std::size_t length, std::size_t num_classes);

// p_c = (#negatives / #positives) of column c over all valid rows, clamped to
// [1, max_weight]; 1 for a column without positives.
std::vector<double> positive_weights(std::span<const Tensor> targets,
                                     std::span<const std::size_t> valid_lens,
                                     double max_weight = 100.0);

// ---- optimizer ----------------------------------------------------------------

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

// One bias-corrected Adam update in parameter order. Throws NumericError
// naming the parameter if any gradient entry is non-finite; parameters are
// left untouched in that case.
void optimizer_step(const NamedParams& params, std::span<const Tensor> grads, AdamState& state,
                    double lr, const AdamOptions& options = {});

// ---- checkpoints --------------------------------------------------------------

// "CADW", u32 version, then blocks until EOF: u32 name length, UTF-8 name,
// u32 rank, u32 dims..., f64 payload (all little-endian). Hyperparameters
// that shapes cannot express are stored as "meta.*" blocks.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const ModelConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- inference ----------------------------------------------------------------

// Chunks the video, runs the model and decodes each chunk; segments are
// mapped back to video snippet indices.
std::vector<Segment> predict_video(const ModelParams& params, const ModelConfig& config,
                                   const VideoSample& video, const AnchorSet& anchors,
                                   const DecodeOptions& decode);

// Videos are processed in parallel (`threads`), results kept in video order.
std::vector<Detection> predict_dataset(const ModelParams& params, const ModelConfig& config,
                                       const Dataset& dataset, const AnchorSet& anchors,
                                       const DecodeOptions& decode, int threads = 1);

// ---- training -----------------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  std::size_t snippet_len = 24;  // frames per snippet, recorded only
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 1;  // chunks per optimizer step
  std::uint64_t seed = 0;
  std::size_t anchor_count = 128;
  std::vector<std::size_t> anchor_scales;  // empty -> default_anchor_scales(N)
  std::optional<double> lambda;            // unset -> anchor_count
  std::vector<double> pos_weight;          // empty -> derived from the data
  double max_pos_weight = 100.0;
  int threads = 1;
  DecodeOptions decode;
  EvalProtocol protocol = protocol_preset("thumos14");

  double resolved_lambda() const {
    return lambda.value_or(static_cast<double>(anchor_count));
  }
  std::vector<std::size_t> resolved_anchor_scales() const;
  AnchorSet anchors() const;
};

void validate(const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss_act = 0.0;
  double loss_br = 0.0;
  double loss_total = 0.0;
  std::optional<double> map_avg;  // held-out average mAP when requested
};

struct TrainOptions {
  const Dataset* validation = nullptr;
  // Written after every completed epoch; the last good one survives a
  // divergence.
  std::optional<std::filesystem::path> checkpoint;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> metrics;
  std::vector<double> pos_weight;
  double lambda = 0.0;
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, ModelParams last_good)
      : NumericError(what), epoch_(epoch), last_good_(std::move(last_good)) {}
  std::size_t epoch() const noexcept { return epoch_; }
  const ModelParams& last_good() const noexcept { return last_good_; }

 private:
  std::size_t epoch_;
  ModelParams last_good_;
};

// Training loss of one chunk and its gradients in ModelParams::named() order.
struct ChunkGradients {
  double loss_act = 0.0;
  double loss_br = 0.0;
  double loss_total = 0.0;
  std::vector<Tensor> grads;
};

struct ChunkTargets {
  Tensor activity;                // N x (C + 1)
  std::vector<double> boundary;  // N
  std::size_t valid_len = 0;
};

ChunkTargets chunk_targets(const VideoSample& chunk, const AnchorSet& anchors,
                           std::size_t num_classes);

// Full loss of one chunk as a differentiable scalar on `tape`.
struct ChunkLoss {
  ad::Var act, br, total;
};
ChunkLoss chunk_loss(ad::Tape& tape, const ModelVars& vars, const VideoSample& chunk,
                     const ChunkTargets& targets, const ModelConfig& config,
                     std::span<const double> pos_weight, double lambda);

ChunkGradients chunk_gradients(const ModelParams& params, const VideoSample& chunk,
                               const ChunkTargets& targets, const ModelConfig& config,
                               std::span<const double> pos_weight, double lambda);

// Central-difference check of chunk_loss gradients w.r.t. every parameter.
ad::GradCheckReport model_grad_check(const ModelParams& params, const ModelConfig& config,
                                     const VideoSample& chunk, const AnchorSet& anchors,
                                     std::span<const double> pos_weight, double lambda,
                                     double eps = 1e-5);

// Small fixed problem (N = 8, D = 8, C = 2, one attention layer with two
// heads, 4 anchors) run through model_grad_check.
ad::GradCheckReport toy_grad_check(std::uint64_t seed, double eps = 1e-5);

// Epoch order is a seeded shuffle of all chunks; batches are merged in a
// fixed order so results do not depend on `threads`.
TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

// Header plus one "epoch,loss_act,loss_br,loss_total,map_avg" row per epoch.
std::string metrics_csv(std::span<const EpochMetrics> metrics);

}  // namespace compad
