#include "compad/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "compad/error.hpp"
#include "compad/kernels.hpp"

namespace compad::ad {

// ---- Var / Tape -------------------------------------------------------------

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(*this); }

bool Var::requires_grad() const { return tape().requires_grad(*this); }

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError("Var does not belong to this tape");
  }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id_].requires_grad;
}

Tensor Tape::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.id_];
  if (n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape()) {
    return n.grad;
  }
  return Tensor::zeros(n.value.shape());
}

void Tape::backward(Var loss) {
  check_owned(loss);
  const Tensor& lv = nodes_[loss.id_].value;
  if (lv.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_string(lv.shape()));
  }
  for (Node& n : nodes_) {
    if (n.requires_grad) {
      n.grad = Tensor::zeros(n.value.shape());
    } else {
      n.grad = Tensor();
    }
  }
  if (!nodes_[loss.id_].requires_grad) return;
  nodes_[loss.id_].grad.fill(1.0);

  std::vector<Tensor*> slots;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward) continue;
    slots.clear();
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      slots.push_back(src.requires_grad ? &src.grad : nullptr);
    }
    n.backward(*this, n.grad, slots);
  }
}

// ---- helpers ---------------------------------------------------------------

namespace {

void require_rank(Var v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         shape_string(v.shape()));
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

Tape& common_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands on different tapes");
  return a.tape();
}

template <class F>
Var unary(Var x, Tensor out, F&& local_grad) {
  Tape& t = x.tape();
  return t.record(std::move(out), {x},
                  [x, local_grad = std::forward<F>(local_grad)](
                      const Tape& tape, const Tensor& g, std::span<Tensor* const> gi) {
                    if (!gi[0]) return;
                    const Tensor& xv = tape.value(x.id());
                    auto dx = gi[0]->data();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      dx[i] += g[i] * local_grad(xv[i], i);
                    }
                  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Softmax over `n` contiguous entries starting at `offset`.
void softmax_segment(std::span<const double> s, const Mask& mask,
                     std::size_t offset, std::size_t n, std::span<double> y) {
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[offset + j]) {
      mx = std::max(mx, s[offset + j]);
      any = true;
    }
  }
  if (!any) throw DomainError("masked_softmax: mask has no set entry");
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double e = mask[offset + j] ? std::exp(s[offset + j] - mx) : 0.0;
    y[offset + j] = e;
    total += e;
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[offset + j]) y[offset + j] /= total;
  }
}

void softmax_segment_grad(std::span<const double> y, std::span<const double> g,
                          std::size_t offset, std::size_t n,
                          std::span<double> dx) {
  double dot = 0.0;
  for (std::size_t j = 0; j < n; ++j) dot += y[offset + j] * g[offset + j];
  for (std::size_t j = 0; j < n; ++j) {
    // masked-out entries have y == 0 and receive no gradient
    dx[offset + j] += y[offset + j] * (g[offset + j] - dot);
  }
}

std::size_t row_width(Var v) {
  const auto& s = v.shape();
  if (s.size() == 1) return s[0];
  if (s.size() == 2 && s[0] == 1) return s[1];
  throw DimensionError("expected a row vector, got " + shape_string(s));
}

}  // namespace

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(Shape{m, n});
  kernels::gemm({.m = m, .n = n, .k = k}, av.data(), bv.data(), out.data());
  return t.record(std::move(out), {a, b},
                  [a, b, m, k, n](const Tape& tape, const Tensor& g,
                                  std::span<Tensor* const> gi) {
                    if (gi[0]) {
                      kernels::gemm({.m = m, .n = k, .k = n, .trans_b = true,
                                     .accumulate = true},
                                    g.data(), tape.value(b.id()).data(),
                                    gi[0]->data());
                    }
                    if (gi[1]) {
                      kernels::gemm({.m = k, .n = n, .k = m, .trans_a = true,
                                     .accumulate = true},
                                    tape.value(a.id()).data(), g.data(),
                                    gi[1]->data());
                    }
                  });
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(j, i) = av(i, j);
  }
  return a.tape().record(std::move(out), {a},
                         [m, n](const Tape&, const Tensor& g,
                                std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           Tensor& d = *gi[0];
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < n; ++j) d(i, j) += g(j, i);
                           }
                         });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a},
                         [](const Tape&, const Tensor& g,
                            std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           auto d = gi[0]->data();
                           for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                         });
}

// ---- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.record(std::move(out), {a, b},
                  [](const Tape&, const Tensor& g, std::span<Tensor* const> gi) {
                    for (Tensor* d : gi) {
                      if (!d) continue;
                      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
                    }
                  });
}

Var sub(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.record(std::move(out), {a, b},
                  [](const Tape&, const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) {
                      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                    }
                    if (gi[1]) {
                      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
                    }
                  });
}

Var mul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record(std::move(out), {a, b},
                  [a, b](const Tape& tape, const Tensor& g,
                         std::span<Tensor* const> gi) {
                    const Tensor& av = tape.value(a.id());
                    const Tensor& bv = tape.value(b.id());
                    if (gi[0]) {
                      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bv[i];
                    }
                    if (gi[1]) {
                      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * av[i];
                    }
                  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape().record(std::move(out), {a},
                         [factor](const Tape&, const Tensor& g,
                                  std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             (*gi[0])[i] += g[i] * factor;
                           }
                         });
}

Var add_row_bias(Var a, Var bias) {
  Tape& t = common_tape(a, bias);
  require_rank(a, 2, "add_row_bias");
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (bias.value().size() != n) {
    throw DimensionError("add_row_bias: bias " + shape_string(bias.shape()) +
                         " does not match " + shape_string(av.shape()));
  }
  Tensor out = av;
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
  }
  return t.record(std::move(out), {a, bias},
                  [m, n](const Tape&, const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) {
                      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                    }
                    if (gi[1]) {
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) (*gi[1])[j] += g(i, j);
                      }
                    }
                  });
}

Var add_col_bias(Var a, Var bias) {
  Tape& t = common_tape(a, bias);
  require_rank(a, 2, "add_col_bias");
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (bias.value().size() != m) {
    throw DimensionError("add_col_bias: bias " + shape_string(bias.shape()) +
                         " does not match " + shape_string(av.shape()));
  }
  Tensor out = av;
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[i];
  }
  return t.record(std::move(out), {a, bias},
                  [m, n](const Tape&, const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) {
                      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                    }
                    if (gi[1]) {
                      for (std::size_t i = 0; i < m; ++i) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g(i, j);
                        (*gi[1])[i] += s;
                      }
                    }
                  });
}

Var leaky_relu(Var x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw DomainError("leaky_relu: slope must lie in (0, 1), got " +
                      std::to_string(slope));
  }
  Tensor out = x.value();
  for (double& v : out.data()) {
    if (std::isnan(v)) throw DomainError("leaky_relu: NaN input");
    if (v < 0.0) v *= slope;
  }
  return unary(x, std::move(out),
               [slope](double xv, std::size_t) { return xv >= 0.0 ? 1.0 : slope; });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = stable_sigmoid(v);
  Tape& t = x.tape();
  // The closure reads the output back from the tape; its id is the next slot.
  const std::size_t out_id = t.size();
  return t.record(std::move(out), {x},
                  [out_id](const Tape& tape, const Tensor& g,
                           std::span<Tensor* const> gi) {
                    if (!gi[0]) return;
                    const Tensor& y = tape.value(out_id);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      (*gi[0])[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                  });
}

// ---- softmax / attention ---------------------------------------------------

Var masked_softmax(Var scores, const Mask& mask) {
  require_rank(scores, 1, "masked_softmax");
  const Tensor& s = scores.value();
  const std::size_t n = s.size();
  if (mask.size() != n) {
    throw DimensionError("masked_softmax: mask length " + std::to_string(mask.size()) +
                         " vs scores " + shape_string(s.shape()));
  }
  Tensor out(s.shape());
  softmax_segment(s.data(), mask, 0, n, out.data());
  Tape& t = scores.tape();
  const std::size_t out_id = t.size();
  return t.record(std::move(out), {scores},
                  [out_id, n](const Tape& tape, const Tensor& g,
                              std::span<Tensor* const> gi) {
                    if (!gi[0]) return;
                    softmax_segment_grad(tape.value(out_id).data(), g.data(), 0, n,
                                         gi[0]->data());
                  });
}

Var masked_softmax_rows(Var scores, const Mask& mask) {
  require_rank(scores, 2, "masked_softmax_rows");
  const Tensor& s = scores.value();
  const std::size_t m = s.rows(), n = s.cols();
  if (mask.size() != m * n) {
    throw DimensionError("masked_softmax_rows: mask size " +
                         std::to_string(mask.size()) + " vs scores " +
                         shape_string(s.shape()));
  }
  Tensor out(s.shape());
  for (std::size_t i = 0; i < m; ++i) softmax_segment(s.data(), mask, i * n, n, out.data());
  Tape& t = scores.tape();
  const std::size_t out_id = t.size();
  return t.record(std::move(out), {scores},
                  [out_id, m, n](const Tape& tape, const Tensor& g,
                                 std::span<Tensor* const> gi) {
                    if (!gi[0]) return;
                    const auto y = tape.value(out_id).data();
                    for (std::size_t i = 0; i < m; ++i) {
                      softmax_segment_grad(y, g.data(), i * n, n, gi[0]->data());
                    }
                  });
}

Var pairwise_sum(Var s) {
  require_rank(s, 2, "pairwise_sum");
  const Tensor& sv = s.value();
  if (sv.cols() != 2) {
    throw DimensionError("pairwise_sum: expected [m x 2], got " +
                         shape_string(sv.shape()));
  }
  const std::size_t m = sv.rows();
  Tensor out(Shape{m, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) out(i, j) = sv(i, 0) + sv(j, 1);
  }
  return s.tape().record(std::move(out), {s},
                         [m](const Tape&, const Tensor& g,
                             std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           Tensor& d = *gi[0];
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < m; ++j) {
                               d(i, 0) += g(i, j);
                               d(j, 1) += g(i, j);
                             }
                           }
                         });
}

// ---- structural ------------------------------------------------------------

Var mean_rows(Var a) {
  require_rank(a, 2, "mean_rows");
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (m == 0) throw DimensionError("mean_rows: empty matrix");
  Tensor out(Shape{1, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j] += av(i, j);
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (double& v : out.data()) v *= inv;
  return a.tape().record(std::move(out), {a},
                         [m, n, inv](const Tape&, const Tensor& g,
                                     std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < n; ++j) {
                               (*gi[0])(i, j) += g[j] * inv;
                             }
                           }
                         });
}

Var row(Var a, std::size_t index) {
  require_rank(a, 2, "row");
  const Tensor& av = a.value();
  const std::size_t n = av.cols();
  if (index >= av.rows()) {
    throw DimensionError("row: index " + std::to_string(index) + " out of range for " +
                         shape_string(av.shape()));
  }
  Tensor out(Shape{1, n});
  for (std::size_t j = 0; j < n; ++j) out[j] = av(index, j);
  return a.tape().record(std::move(out), {a},
                         [index, n](const Tape&, const Tensor& g,
                                    std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           for (std::size_t j = 0; j < n; ++j) (*gi[0])(index, j) += g[j];
                         });
}

Var stack_rows(std::span<const Var> rows, std::size_t total_rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows to infer a width from");
  if (rows.size() > total_rows) {
    throw DimensionError("stack_rows: " + std::to_string(rows.size()) +
                         " rows exceed capacity " + std::to_string(total_rows));
  }
  const std::size_t n = row_width(rows[0]);
  Tape& t = rows[0].tape();
  Tensor out(Shape{total_rows, n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (&rows[i].tape() != &t) throw ContractError("stack_rows: operands on different tapes");
    if (row_width(rows[i]) != n) {
      throw DimensionError("stack_rows: row " + std::to_string(i) + " has shape " +
                           shape_string(rows[i].shape()));
    }
    const auto v = rows[i].value().data();
    std::copy(v.begin(), v.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return t.record(std::move(out), rows,
                  [n](const Tape&, const Tensor& g, std::span<Tensor* const> gi) {
                    for (std::size_t i = 0; i < gi.size(); ++i) {
                      if (!gi[i]) continue;
                      for (std::size_t j = 0; j < n; ++j) (*gi[i])[j] += g[i * n + j];
                    }
                  });
}

Var hconcat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("hconcat: nothing to concatenate");
  Tape& t = parts[0].tape();
  const std::size_t m = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw ContractError("hconcat: operands on different tapes");
    require_rank(p, 2, "hconcat");
    if (p.value().rows() != m) {
      throw DimensionError("hconcat: row count mismatch " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out(Shape{m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < widths[k]; ++j) out(i, off + j) = pv(i, j);
    }
    off += widths[k];
  }
  return t.record(std::move(out), parts,
                  [m, widths](const Tape&, const Tensor& g,
                              std::span<Tensor* const> gi) {
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < gi.size(); ++k) {
                      if (gi[k]) {
                        for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t j = 0; j < widths[k]; ++j) {
                            (*gi[k])(i, j) += g(i, off + j);
                          }
                        }
                      }
                      off += widths[k];
                    }
                  });
}

Var average(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("average: nothing to average");
  Tape& t = parts[0].tape();
  Tensor out = parts[0].value();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    if (&parts[k].tape() != &t) throw ContractError("average: operands on different tapes");
    require_same_shape(parts[0], parts[k], "average");
    const auto v = parts[k].value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  for (double& v : out.data()) v *= inv;
  return t.record(std::move(out), parts,
                  [inv](const Tape&, const Tensor& g, std::span<Tensor* const> gi) {
                    for (Tensor* d : gi) {
                      if (!d) continue;
                      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * inv;
                    }
                  });
}

// ---- reductions ------------------------------------------------------------

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s), {a},
                         [](const Tape&, const Tensor& g, std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           for (double& v : gi[0]->data()) v += g[0];
                         });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean: empty tensor");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const double inv = 1.0 / static_cast<double>(n);
  return a.tape().record(Tensor::scalar(s * inv), {a},
                         [inv](const Tape&, const Tensor& g,
                               std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           for (double& v : gi[0]->data()) v += g[0] * inv;
                         });
}

// ---- convolution -----------------------------------------------------------

Var conv1d(Var x, Var kernels, std::size_t stride, std::size_t padding) {
  Tape& t = common_tape(x, kernels);
  require_rank(x, 2, "conv1d");
  require_rank(kernels, 3, "conv1d");
  const Tensor& xv = x.value();
  const Tensor& wv = kernels.value();
  if (stride < 1) throw DimensionError("conv1d: stride must be >= 1");
  if (wv.dim(1) != xv.rows()) {
    throw DimensionError("conv1d: kernels " + shape_string(wv.shape()) +
                         " do not match input channels of " + shape_string(xv.shape()));
  }
  const kernels::Conv1d geom{.c_in = xv.rows(),
                             .length = xv.cols(),
                             .c_out = wv.dim(0),
                             .kernel = wv.dim(2),
                             .stride = stride,
                             .padding = padding};
  if (geom.length + 2 * padding < geom.kernel) {
    throw DimensionError("conv1d: kernel of length " + std::to_string(geom.kernel) +
                         " exceeds padded input " + shape_string(xv.shape()) +
                         " with padding " + std::to_string(padding));
  }
  Tensor out(Shape{geom.c_out, geom.out_length()});
  kernels::conv1d(geom, xv.data(), wv.data(), out.data());
  return t.record(std::move(out), {x, kernels},
                  [x, kernels, geom](const Tape& tape, const Tensor& g,
                                     std::span<Tensor* const> gi) {
                    if (gi[0]) {
                      kernels::conv1d_grad_input(geom, g.data(),
                                                 tape.value(kernels.id()).data(),
                                                 gi[0]->data());
                    }
                    if (gi[1]) {
                      kernels::conv1d_grad_weight(geom, g.data(),
                                                  tape.value(x.id()).data(),
                                                  gi[1]->data());
                    }
                  });
}

// ---- gradient check --------------------------------------------------------

GradCheckReport grad_check(const ScalarFunction& f, std::span<const Tensor> params,
                           double eps) {
  if (!(eps > 1e-8 && eps < 1e-3)) {
    throw DomainError("grad_check: eps must lie in (1e-8, 1e-3)");
  }
  auto evaluate = [&f](std::span<const Tensor> ps) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(ps.size());
    for (const Tensor& p : ps) vars.push_back(tape.leaf(p, false));
    const double v = f(tape, vars).value().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: function returned a non-finite value");
    return v;
  };

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.leaf(p, true));
    Var loss = f(tape, vars);
    if (!std::isfinite(loss.value().item())) {
      throw NumericError("grad_check: function returned a non-finite value");
    }
    tape.backward(loss);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  std::vector<Tensor> work(params.begin(), params.end());
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double orig = work[p][i];
      work[p][i] = orig + eps;
      const double up = evaluate(work);
      work[p][i] = orig - eps;
      const double down = evaluate(work);
      work[p][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.entries;
      if (err > report.max_rel_error || report.entries == 1) {
        report.max_rel_error = err;
        report.worst_param = p;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace compad::ad
