#pragma once

// Dense numeric kernels behind the autodiff engine.
//
// Every kernel comes in a `_serial` reference form and a `_parallel` OpenMP
// form. Both compute each output element with the same summation order, so
// the two are bit-identical; the parallel form only distributes independent
// output rows across threads. The unsuffixed entry points pick the parallel
// form when the problem is large enough and we are not already inside a
// parallel region.

#include <cstddef>
#include <span>

namespace compad::kernels {

void set_num_threads(int n);
int num_threads();

// Work (multiply-adds) below which dispatch stays serial.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

// C[m x n] (=|+=) op(A) * op(B), where op(A) is m x k and op(B) is k x n.
// With trans_a the buffer `a` holds A as k x m; with trans_b `b` holds n x k.
struct Gemm {
  std::size_t m = 0, n = 0, k = 0;
  bool trans_a = false;
  bool trans_b = false;
  bool accumulate = false;
};

void gemm_serial(const Gemm& g, std::span<const double> a,
                 std::span<const double> b, std::span<double> c);
void gemm_parallel(const Gemm& g, std::span<const double> a,
                   std::span<const double> b, std::span<double> c);
void gemm(const Gemm& g, std::span<const double> a, std::span<const double> b,
          std::span<double> c);

// Cross-correlation (no kernel flip) with zero padding.
// x: c_in x length, w: c_out x c_in x kernel, y: c_out x out_length().
struct Conv1d {
  std::size_t c_in = 0, length = 0, c_out = 0, kernel = 0;
  std::size_t stride = 1, padding = 0;

  std::size_t out_length() const {
    return (length + 2 * padding - kernel) / stride + 1;
  }
  std::size_t work() const { return c_out * out_length() * c_in * kernel; }
};

void conv1d_serial(const Conv1d& g, std::span<const double> x,
                   std::span<const double> w, std::span<double> y);
void conv1d_parallel(const Conv1d& g, std::span<const double> x,
                     std::span<const double> w, std::span<double> y);
void conv1d(const Conv1d& g, std::span<const double> x,
            std::span<const double> w, std::span<double> y);

// dx += conv1d^T(dy, w)
void conv1d_grad_input_serial(const Conv1d& g, std::span<const double> dy,
                              std::span<const double> w, std::span<double> dx);
void conv1d_grad_input_parallel(const Conv1d& g, std::span<const double> dy,
                                std::span<const double> w,
                                std::span<double> dx);
void conv1d_grad_input(const Conv1d& g, std::span<const double> dy,
                       std::span<const double> w, std::span<double> dx);

// dw += correlation of dy with x
void conv1d_grad_weight_serial(const Conv1d& g, std::span<const double> dy,
                               std::span<const double> x,
                               std::span<double> dw);
void conv1d_grad_weight_parallel(const Conv1d& g, std::span<const double> dy,
                                 std::span<const double> x,
                                 std::span<double> dw);
void conv1d_grad_weight(const Conv1d& g, std::span<const double> dy,
                        std::span<const double> x, std::span<double> dw);

}  // namespace compad::kernels
