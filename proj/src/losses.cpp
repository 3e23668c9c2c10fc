#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "compad/error.hpp"
#include "compad/training.hpp"

namespace compad {

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

ad::Var boundary_loss(ad::Var pred, std::span<const double> target,
                      std::span<const double> weights, std::size_t valid_len) {
  const Tensor& p = pred.value();
  if (p.size() < valid_len || target.size() < valid_len ||
      (!weights.empty() && weights.size() < valid_len)) {
    throw DimensionError(fmt::format("boundary_loss: inputs shorter than valid_len {}", valid_len));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < valid_len; ++i) {
    const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    const double w = weights.empty() ? 1.0 : weights[i];
    total += -w * (target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q));
  }
  const double inv = valid_len ? 1.0 / static_cast<double>(valid_len) : 0.0;
  std::vector<double> y(target.begin(), target.begin() + static_cast<std::ptrdiff_t>(valid_len));
  std::vector<double> w;
  if (!weights.empty()) w.assign(weights.begin(), weights.begin() + static_cast<std::ptrdiff_t>(valid_len));

  return pred.tape().record(
      Tensor::scalar(total * inv), {pred},
      [pred, y = std::move(y), w = std::move(w), inv](const ad::Tape& tape, const Tensor& g,
                                                      std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        const Tensor& p = tape.value(pred.id());
        for (std::size_t i = 0; i < y.size(); ++i) {
          // clamp has zero derivative outside its range
          if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;
          const double wi = w.empty() ? 1.0 : w[i];
          (*gi[0])[i] += g[0] * inv * -wi * (y[i] / p[i] - (1.0 - y[i]) / (1.0 - p[i]));
        }
      });
}

ad::Var activity_loss(ad::Var logits, const Tensor& targets, std::span<const double> pos_weight,
                      const Tensor* weights, std::size_t valid_len) {
  const Tensor& x = logits.value();
  if (x.rank() != 2 || targets.shape() != x.shape()) {
    throw DimensionError("activity_loss: logits " + shape_string(x.shape()) + " vs targets " +
                         shape_string(targets.shape()));
  }
  const std::size_t cols = x.cols();
  if (valid_len > x.rows()) throw DimensionError("activity_loss: valid_len exceeds rows");
  if (!pos_weight.empty() && pos_weight.size() != cols) {
    throw DimensionError(fmt::format("activity_loss: {} positive weights for {} classes",
                                     pos_weight.size(), cols));
  }
  if (weights && weights->shape() != x.shape()) {
    throw DimensionError("activity_loss: sample weights must match the logits");
  }
  for (std::size_t i = 0; i < valid_len * cols; ++i) {
    if (targets[i] != 0.0 && targets[i] != 1.0) {
      throw DomainError("activity_loss: targets must be binary");
    }
  }

  double total = 0.0;
  for (std::size_t i = 0; i < valid_len; ++i) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double xv = x(i, c), y = targets(i, c);
      const double pc = pos_weight.empty() ? 1.0 : pos_weight[c];
      const double w = weights ? (*weights)(i, c) : 1.0;
      total += w * (pc * y * softplus(-xv) + (1.0 - y) * softplus(xv));
    }
  }
  const double inv = valid_len ? 1.0 / static_cast<double>(valid_len * cols) : 0.0;
  std::vector<double> pw(pos_weight.begin(), pos_weight.end());
  std::optional<Tensor> wt;
  if (weights) wt = *weights;

  return logits.tape().record(
      Tensor::scalar(total * inv), {logits},
      [logits, targets, pw = std::move(pw), wt = std::move(wt), inv, valid_len, cols](
          const ad::Tape& tape, const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0]) return;
        const Tensor& x = tape.value(logits.id());
        for (std::size_t i = 0; i < valid_len; ++i) {
          for (std::size_t c = 0; c < cols; ++c) {
            const double s = stable_sigmoid(x(i, c));
            const double y = targets(i, c);
            const double pc = pw.empty() ? 1.0 : pw[c];
            const double w = wt ? (*wt)(i, c) : 1.0;
            (*gi[0])(i, c) += g[0] * inv * w * (pc * y * (s - 1.0) + (1.0 - y) * s);
          }
        }
      });
}

ad::Var total_loss(ad::Var l_act, ad::Var l_br, double lambda) {
  return ad::add(ad::scale(l_act, lambda), l_br);
}

Tensor activity_targets(const VideoSample& chunk, std::size_t length, std::size_t num_classes) {
  const std::size_t valid = chunk.snippets.size();
  if (valid > length) {
    throw ContractError(fmt::format("chunk of {} snippets exceeds temporal length {}", valid,
                                    length));
  }
  Tensor t(Shape{length, num_classes + 1});
  for (const auto& g : chunk.ground_truth) {
    for (std::size_t i = g.start_snippet; i <= g.end_snippet && i < valid; ++i) {
      t(i, static_cast<std::size_t>(g.activity_class)) = 1.0;
    }
  }
  for (std::size_t i = 0; i < valid; ++i) {
    bool any = false;
    for (std::size_t c = 0; c < num_classes; ++c) any = any || t(i, c) != 0.0;
    if (!any) t(i, num_classes) = 1.0;
  }
  return t;
}

std::vector<double> positive_weights(std::span<const Tensor> targets,
                                     std::span<const std::size_t> valid_lens, double max_weight) {
  if (targets.empty()) return {};
  const std::size_t cols = targets[0].cols();
  std::vector<double> pos(cols, 0.0), total(cols, 0.0);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    for (std::size_t i = 0; i < valid_lens[k]; ++i) {
      for (std::size_t c = 0; c < cols; ++c) {
        pos[c] += targets[k](i, c);
        total[c] += 1.0;
      }
    }
  }
  std::vector<double> out(cols, 1.0);
  for (std::size_t c = 0; c < cols; ++c) {
    if (pos[c] > 0.0) out[c] = std::clamp((total[c] - pos[c]) / pos[c], 1.0, max_weight);
  }
  return out;
}

}  // namespace compad
