#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <omp.h>

#include "compad/training.hpp"

namespace compad {

std::vector<std::size_t> TrainConfig::resolved_anchor_scales() const {
  return anchor_scales.empty() ? default_anchor_scales(model.temporal_len) : anchor_scales;
}

AnchorSet TrainConfig::anchors() const {
  const auto scales = resolved_anchor_scales();
  return generate_anchors(model.temporal_len, scales, anchor_count);
}

void validate(const TrainConfig& c) {
  validate(c.model);
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) {
    throw ConfigError("learning rate must be a finite value >= 0");
  }
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (c.anchor_count < 1) throw ConfigError("anchor count must be >= 1");
  if (c.lambda && !(*c.lambda >= 0.0 && std::isfinite(*c.lambda))) {
    throw ConfigError("lambda must be a finite value >= 0");
  }
  if (!c.pos_weight.empty()) {
    if (c.pos_weight.size() != c.model.num_classes + 1) {
      throw ConfigError(fmt::format("expected {} positive weights (classes + background), got {}",
                                    c.model.num_classes + 1, c.pos_weight.size()));
    }
    for (double w : c.pos_weight) {
      if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("positive weights must be > 0");
    }
  }
  if (!(c.max_pos_weight >= 1.0)) throw ConfigError("max positive weight must be >= 1");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  if (!(c.decode.nms_iou > 0.0 && c.decode.nms_iou <= 1.0)) {
    throw ConfigError("NMS IoU must lie in (0, 1]");
  }
  if (c.decode.top_k < 1) throw ConfigError("top-k must be >= 1");
  validate(c.protocol);
  (void)c.anchors();  // throws on bad scales
}

ChunkTargets chunk_targets(const VideoSample& chunk, const AnchorSet& anchors,
                           std::size_t num_classes) {
  ChunkTargets t;
  t.valid_len = chunk.snippets.size();
  t.activity = activity_targets(chunk, anchors.length, num_classes);
  t.boundary = match_anchors(anchors, chunk.ground_truth).boundary_target;
  return t;
}

ChunkLoss chunk_loss(ad::Tape& tape, const ModelVars& vars, const VideoSample& chunk,
                     const ChunkTargets& targets, const ModelConfig& config,
                     std::span<const double> pos_weight, double lambda) {
  const TemporalOutput y = forward_chunk(tape, vars, chunk, config);
  ChunkLoss l;
  l.act = activity_loss(y.class_logits, targets.activity, pos_weight, nullptr, targets.valid_len);
  l.br = boundary_loss(y.boundary_probs, targets.boundary, {}, targets.valid_len);
  l.total = total_loss(l.act, l.br, lambda);
  return l;
}

ChunkGradients chunk_gradients(const ModelParams& params, const VideoSample& chunk,
                               const ChunkTargets& targets, const ModelConfig& config,
                               std::span<const double> pos_weight, double lambda) {
  ad::Tape tape;
  const ModelVars vars = bind(tape, params, true);
  const ChunkLoss l = chunk_loss(tape, vars, chunk, targets, config, pos_weight, lambda);
  ChunkGradients g;
  g.loss_act = l.act.value().item();
  g.loss_br = l.br.value().item();
  g.loss_total = l.total.value().item();
  if (!std::isfinite(g.loss_total)) return g;
  tape.backward(l.total);
  g.grads.reserve(vars.all.size());
  for (const ad::Var& v : vars.all) g.grads.push_back(tape.grad(v));
  return g;
}

namespace {

void check_compatible(const Dataset& d, const ModelConfig& m, const char* role) {
  if (d.feature_dim != m.feature_dim) {
    throw ConfigError(fmt::format("{} data has feature dimension {}, model expects {}", role,
                                  d.feature_dim, m.feature_dim));
  }
  if (d.num_activity_classes != m.num_classes) {
    throw ConfigError(fmt::format("{} data has {} activity classes, model expects {}", role,
                                  d.num_activity_classes, m.num_classes));
  }
}

std::optional<double> validation_map(const ModelParams& params, const TrainConfig& c,
                                     const AnchorSet& anchors, const Dataset& data) {
  const auto gt = collect_ground_truth(data.videos);
  if (gt.empty()) return std::nullopt;
  const auto dets = predict_dataset(params, c.model, data, anchors, c.decode, c.threads);
  return mean_ap(dets, gt, c.protocol).avg_map;
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& c, const TrainOptions& options) {
  validate(c);
  validate(dataset);
  check_compatible(dataset, c.model, "training");
  if (options.validation) check_compatible(*options.validation, c.model, "validation");

  const AnchorSet anchors = c.anchors();
  const std::size_t C = c.model.num_classes;

  std::vector<Chunk> chunks;
  for (const auto& v : dataset.videos) {
    for (auto& ch : chunk_video(v, c.model.temporal_len)) chunks.push_back(std::move(ch));
  }
  if (chunks.empty()) throw ConfigError("training data contains no snippets");

  std::vector<ChunkTargets> targets;
  targets.reserve(chunks.size());
  for (const auto& ch : chunks) targets.push_back(chunk_targets(ch.sample, anchors, C));

  TrainResult result;
  result.lambda = c.resolved_lambda();
  if (!c.pos_weight.empty()) {
    result.pos_weight = c.pos_weight;
  } else {
    std::vector<Tensor> acts;
    std::vector<std::size_t> lens;
    for (const auto& t : targets) {
      acts.push_back(t.activity);
      lens.push_back(t.valid_len);
    }
    result.pos_weight = positive_weights(acts, lens, c.max_pos_weight);
  }

  result.params = init_model(c.model, c.seed);
  NamedParams named = result.params.named();
  AdamState adam;
  std::mt19937_64 rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(chunks.size());
  const int threads = std::max(1, c.threads);

  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double sum_act = 0.0, sum_br = 0.0, sum_total = 0.0;

    for (std::size_t b0 = 0; b0 < order.size(); b0 += c.batch_size) {
      const std::size_t bn = std::min(c.batch_size, order.size() - b0);
      std::vector<ChunkGradients> parts(bn);
      std::exception_ptr failure;
#pragma omp parallel for num_threads(bn > 1 ? threads : 1) schedule(static)
      for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(bn); ++j) {
        const std::size_t k = order[b0 + static_cast<std::size_t>(j)];
        try {
          parts[static_cast<std::size_t>(j)] = chunk_gradients(
              result.params, chunks[k].sample, targets[k], c.model, result.pos_weight,
              result.lambda);
        } catch (...) {
#pragma omp critical(compad_train_failure)
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) {
        try {
          std::rethrow_exception(failure);
        } catch (const DomainError& e) {
          throw DivergenceError(fmt::format("training diverged in epoch {}: {}", epoch, e.what()),
                                epoch, result.params);
        } catch (const DivergenceError&) {
          throw;
        } catch (const NumericError& e) {
          throw DivergenceError(fmt::format("training diverged in epoch {}: {}", epoch, e.what()),
                                epoch, result.params);
        }
      }

      std::vector<Tensor> grads;
      for (std::size_t j = 0; j < bn; ++j) {
        const auto& p = parts[j];
        if (!std::isfinite(p.loss_total)) {
          throw DivergenceError(
              fmt::format("training diverged in epoch {}: non-finite loss", epoch), epoch,
              result.params);
        }
        sum_act += p.loss_act;
        sum_br += p.loss_br;
        sum_total += p.loss_total;
        if (grads.empty()) {
          grads = p.grads;
        } else {
          for (std::size_t q = 0; q < grads.size(); ++q) {
            auto dst = grads[q].data();
            const auto src = p.grads[q].data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(bn);
      for (auto& g : grads) {
        for (double& x : g.data()) x *= inv;
      }
      try {
        optimizer_step(named, grads, adam, c.lr);
      } catch (const NumericError& e) {
        throw DivergenceError(fmt::format("training diverged in epoch {}: {}", epoch, e.what()),
                              epoch, result.params);
      }
    }

    const double n = static_cast<double>(chunks.size());
    EpochMetrics m{epoch, sum_act / n, sum_br / n, sum_total / n, std::nullopt};
    if (options.validation) m.map_avg = validation_map(result.params, c, anchors, *options.validation);
    result.metrics.push_back(m);
    if (options.checkpoint) save_checkpoint(*options.checkpoint, result.params, c.model);
    if (options.on_epoch) options.on_epoch(m);
  }
  return result;
}

std::string metrics_csv(std::span<const EpochMetrics> metrics) {
  std::string out = "epoch,loss_act,loss_br,loss_total,map_avg\n";
  for (const auto& m : metrics) {
    out += fmt::format("{},{:.6g},{:.6g},{:.6g},{}\n", m.epoch, m.loss_act, m.loss_br,
                       m.loss_total, m.map_avg ? fmt::format("{:.6g}", *m.map_avg) : "");
  }
  return out;
}

}  // namespace compad

namespace compad {

ad::GradCheckReport model_grad_check(const ModelParams& params, const ModelConfig& config,
                                     const VideoSample& chunk, const AnchorSet& anchors,
                                     std::span<const double> pos_weight, double lambda,
                                     double eps) {
  const ChunkTargets targets = chunk_targets(chunk, anchors, config.num_classes);
  std::vector<Tensor> flat;
  for (const auto& [name, t] : params.named()) flat.push_back(*t);
  const std::vector<double> pw(pos_weight.begin(), pos_weight.end());
  auto f = [&](ad::Tape& tape, std::span<const ad::Var> vars) {
    const ModelVars mv = assemble(params, vars);
    return chunk_loss(tape, mv, chunk, targets, config, pw, lambda).total;
  };
  return ad::grad_check(f, flat, eps);
}

ad::GradCheckReport toy_grad_check(std::uint64_t seed, double eps) {
  SynthConfig sc;
  sc.num_videos = 1;
  sc.num_classes = 2;
  sc.feature_dim = 8;
  sc.num_agent_classes = 2;
  sc.min_snippets = 8;
  sc.max_snippets = 8;
  sc.min_segments = 1;
  sc.max_segments = 2;
  sc.min_segment_len = 2;
  sc.max_segment_len = 3;
  sc.min_gap = 1;
  sc.min_agents = 1;
  sc.max_agents = 3;
  const Dataset data = synth_generate(sc, seed);

  ModelConfig mc;
  mc.feature_dim = 8;
  mc.num_classes = 2;
  mc.hidden_dim = 6;
  mc.scene_dim = 8;
  mc.heads = {2};
  mc.temporal_len = 8;
  const ModelParams params = init_model(mc, seed);
  const std::vector<std::size_t> scales = {2, 4, 8};
  const AnchorSet anchors = generate_anchors(mc.temporal_len, scales, 4);

  const ChunkTargets t = chunk_targets(data.videos[0], anchors, mc.num_classes);
  const std::vector<Tensor> acts{t.activity};
  const std::vector<std::size_t> lens{t.valid_len};
  const auto pw = positive_weights(acts, lens);
  return model_grad_check(params, mc, data.videos[0], anchors, pw,
                          static_cast<double>(anchors.size()), eps);
}

}  // namespace compad
