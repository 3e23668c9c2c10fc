#include "compad/kernels.hpp"

#include <omp.h>

#include <vector>

namespace compad::kernels {

void set_num_threads(int n) { omp_set_num_threads(n < 1 ? 1 : n); }

int num_threads() { return omp_get_max_threads(); }

namespace {

bool use_parallel(std::size_t work) {
  return work >= kParallelThreshold && !omp_in_parallel() &&
         omp_get_max_threads() > 1;
}

// One output row of op(A) * op(B); shared by both gemm variants so the
// summation order is identical.
inline void gemm_row(const Gemm& g, std::span<const double> a,
                     std::span<const double> b, std::span<double> c,
                     std::size_t i, std::vector<double>& acc) {
  acc.assign(g.n, 0.0);
  for (std::size_t t = 0; t < g.k; ++t) {
    const double av = g.trans_a ? a[t * g.m + i] : a[i * g.k + t];
    if (g.trans_b) {
      for (std::size_t j = 0; j < g.n; ++j) acc[j] += av * b[j * g.k + t];
    } else {
      const double* brow = b.data() + t * g.n;
      for (std::size_t j = 0; j < g.n; ++j) acc[j] += av * brow[j];
    }
  }
  double* crow = c.data() + i * g.n;
  if (g.accumulate) {
    for (std::size_t j = 0; j < g.n; ++j) crow[j] += acc[j];
  } else {
    for (std::size_t j = 0; j < g.n; ++j) crow[j] = acc[j];
  }
}

inline double conv_out(const Conv1d& g, std::span<const double> x,
                       std::span<const double> w, std::size_t o,
                       std::size_t p) {
  double s = 0.0;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t q = 0; q < g.kernel; ++q) {
      const std::ptrdiff_t pos =
          static_cast<std::ptrdiff_t>(p * g.stride + q) -
          static_cast<std::ptrdiff_t>(g.padding);
      if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(g.length)) continue;
      s += w[(o * g.c_in + c) * g.kernel + q] * x[c * g.length + pos];
    }
  }
  return s;
}

inline void conv_grad_input_row(const Conv1d& g, std::span<const double> dy,
                                std::span<const double> w,
                                std::span<double> dx, std::size_t c) {
  const std::size_t lo = g.out_length();
  for (std::size_t o = 0; o < g.c_out; ++o) {
    for (std::size_t p = 0; p < lo; ++p) {
      const double d = dy[o * lo + p];
      for (std::size_t q = 0; q < g.kernel; ++q) {
        const std::ptrdiff_t pos =
            static_cast<std::ptrdiff_t>(p * g.stride + q) -
            static_cast<std::ptrdiff_t>(g.padding);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(g.length)) continue;
        dx[c * g.length + pos] += d * w[(o * g.c_in + c) * g.kernel + q];
      }
    }
  }
}

inline void conv_grad_weight_row(const Conv1d& g, std::span<const double> dy,
                                 std::span<const double> x,
                                 std::span<double> dw, std::size_t o) {
  const std::size_t lo = g.out_length();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t q = 0; q < g.kernel; ++q) {
      double s = 0.0;
      for (std::size_t p = 0; p < lo; ++p) {
        const std::ptrdiff_t pos =
            static_cast<std::ptrdiff_t>(p * g.stride + q) -
            static_cast<std::ptrdiff_t>(g.padding);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(g.length)) continue;
        s += dy[o * lo + p] * x[c * g.length + pos];
      }
      dw[(o * g.c_in + c) * g.kernel + q] += s;
    }
  }
}

}  // namespace

void gemm_serial(const Gemm& g, std::span<const double> a,
                 std::span<const double> b, std::span<double> c) {
  std::vector<double> acc;
  for (std::size_t i = 0; i < g.m; ++i) gemm_row(g, a, b, c, i, acc);
}

void gemm_parallel(const Gemm& g, std::span<const double> a,
                   std::span<const double> b, std::span<double> c) {
  const auto m = static_cast<std::ptrdiff_t>(g.m);
#pragma omp parallel
  {
    std::vector<double> acc;
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
      gemm_row(g, a, b, c, static_cast<std::size_t>(i), acc);
    }
  }
}

void gemm(const Gemm& g, std::span<const double> a, std::span<const double> b,
          std::span<double> c) {
  if (use_parallel(g.m * g.n * g.k)) {
    gemm_parallel(g, a, b, c);
  } else {
    gemm_serial(g, a, b, c);
  }
}

void conv1d_serial(const Conv1d& g, std::span<const double> x,
                   std::span<const double> w, std::span<double> y) {
  const std::size_t lo = g.out_length();
  for (std::size_t o = 0; o < g.c_out; ++o) {
    for (std::size_t p = 0; p < lo; ++p) y[o * lo + p] = conv_out(g, x, w, o, p);
  }
}

void conv1d_parallel(const Conv1d& g, std::span<const double> x,
                     std::span<const double> w, std::span<double> y) {
  const std::size_t lo = g.out_length();
  const auto total = static_cast<std::ptrdiff_t>(g.c_out * lo);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t idx = 0; idx < total; ++idx) {
    const auto o = static_cast<std::size_t>(idx) / lo;
    const auto p = static_cast<std::size_t>(idx) % lo;
    y[static_cast<std::size_t>(idx)] = conv_out(g, x, w, o, p);
  }
}

void conv1d(const Conv1d& g, std::span<const double> x,
            std::span<const double> w, std::span<double> y) {
  if (use_parallel(g.work())) {
    conv1d_parallel(g, x, w, y);
  } else {
    conv1d_serial(g, x, w, y);
  }
}

void conv1d_grad_input_serial(const Conv1d& g, std::span<const double> dy,
                              std::span<const double> w, std::span<double> dx) {
  for (std::size_t c = 0; c < g.c_in; ++c) conv_grad_input_row(g, dy, w, dx, c);
}

void conv1d_grad_input_parallel(const Conv1d& g, std::span<const double> dy,
                                std::span<const double> w,
                                std::span<double> dx) {
  const auto n = static_cast<std::ptrdiff_t>(g.c_in);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < n; ++c) {
    conv_grad_input_row(g, dy, w, dx, static_cast<std::size_t>(c));
  }
}

void conv1d_grad_input(const Conv1d& g, std::span<const double> dy,
                       std::span<const double> w, std::span<double> dx) {
  if (use_parallel(g.work())) {
    conv1d_grad_input_parallel(g, dy, w, dx);
  } else {
    conv1d_grad_input_serial(g, dy, w, dx);
  }
}

void conv1d_grad_weight_serial(const Conv1d& g, std::span<const double> dy,
                               std::span<const double> x,
                               std::span<double> dw) {
  for (std::size_t o = 0; o < g.c_out; ++o) conv_grad_weight_row(g, dy, x, dw, o);
}

void conv1d_grad_weight_parallel(const Conv1d& g, std::span<const double> dy,
                                 std::span<const double> x,
                                 std::span<double> dw) {
  const auto n = static_cast<std::ptrdiff_t>(g.c_out);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t o = 0; o < n; ++o) {
    conv_grad_weight_row(g, dy, x, dw, static_cast<std::size_t>(o));
  }
}

void conv1d_grad_weight(const Conv1d& g, std::span<const double> dy,
                        std::span<const double> x, std::span<double> dw) {
  if (use_parallel(g.work())) {
    conv1d_grad_weight_parallel(g, dy, x, dw);
  } else {
    conv1d_grad_weight_serial(g, dy, x, dw);
  }
}

}  // namespace compad::kernels
