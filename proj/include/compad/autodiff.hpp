#pragma once

// Reverse-mode differentiation over a linear tape of tensor operations.
//
// A Tape owns every value produced during a forward pass together with a
// backward closure per operation. Operations are appended in execution order,
// so the tape is topologically sorted by construction and backward() is a
// single reverse sweep. Gradients fan in additively.
//
// Tapes are single-threaded. Use one tape per thread; parameters enter a tape
// as leaves (copies), so several tapes can share one read-only parameter set.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "compad/tensor.hpp"

namespace compad::ad {

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient of the operation's output and one gradient slot
  // per input (nullptr for inputs that need no gradient). Implementations
  // must accumulate (+=) into the slots.
  using Backward = std::function<void(const Tape& tape, const Tensor& grad_out,
                                      std::span<Tensor* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an operation. The output requires a gradient iff any input does;
  // otherwise the closure is dropped.
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);
  Var record(Tensor value, std::initializer_list<Var> inputs,
             Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  // Populates grad() for every requires_grad value reachable from `loss`.
  // Previous gradients are discarded. Throws ContractError unless `loss`
  // holds exactly one element and lives on this tape.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var v) const;
  // Zero tensor when `v` needs no gradient or backward() has not run.
  Tensor grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  // deque keeps references returned by value() stable while recording.
  std::deque<Node> nodes_;
};

// ---- operations -----------------------------------------------------------

using Mask = std::vector<std::uint8_t>;

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// a[m x n] + bias[n] on every row.
Var add_row_bias(Var a, Var bias);
// a[m x n] + bias[m] on every column.
Var add_col_bias(Var a, Var bias);

// y = x for x >= 0, slope * x otherwise. slope must lie in (0, 1).
Var leaky_relu(Var x, double slope = 0.2);
// Overflow-safe logistic function.
Var sigmoid(Var x);

// Softmax over the entries where mask != 0; masked-out entries are exactly 0.
// Throws DomainError if the mask has no set entry.
Var masked_softmax(Var scores, const Mask& mask);
// Row-wise masked softmax of a matrix; `mask` is row-major, same size.
Var masked_softmax_rows(Var scores, const Mask& mask);

// s[m x 2] -> e[m x m] with e(i, j) = s(i, 0) + s(j, 1).
Var pairwise_sum(Var s);

// Column means, [m x n] -> [1 x n].
Var mean_rows(Var a);
// Row `index` of a matrix as [1 x n].
Var row(Var a, std::size_t index);
// Stacks `rows` (each holding n values) into [total_rows x n], zero-filling
// the rows beyond rows.size().
Var stack_rows(std::span<const Var> rows, std::size_t total_rows);
// Concatenates matrices with equal row counts along columns.
Var hconcat(std::span<const Var> parts);
// Elementwise mean of equally shaped values, summed in the given order.
Var average(std::span<const Var> parts);

Var sum(Var a);
Var mean(Var a);

// x[c_in x L], kernels[c_out x c_in x K] -> [c_out x L_out]; cross-correlation
// with zero padding, L_out = (L + 2 * padding - K) / stride + 1.
Var conv1d(Var x, Var kernels, std::size_t stride = 1, std::size_t padding = 0);

// ---- gradient checking ----------------------------------------------------

using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries = 0;
};

// Compares reverse-mode gradients of `f` against central differences.
// The per-entry error is |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckReport grad_check(const ScalarFunction& f, std::span<const Tensor> params,
                           double eps = 1e-5);

}  // namespace compad::ad
