// Reference implementations. These define the semantics every vectorized
// variant is tested against.

#include "duacm/simd/kernels.hpp"

namespace duacm::simd::detail {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* w, const double* x, const double* bias, double* y,
                 std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double b = bias ? bias[r] : 0.0;
    y[r] = b + dot_scalar(w + r * cols, x, cols);
  }
}

void gemv_t_acc_scalar(const double* w, const double* v, double* y, std::size_t rows,
                       std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy_scalar(v[r], w + r * cols, y, cols);
}

void ger_scalar(double alpha, const double* u, const double* v, double* w, std::size_t rows,
                std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy_scalar(alpha * u[r], v, w + r * cols, cols);
}

void bagged_histogram_scalar(const std::uint16_t* bins, const double* grad, const double* hess,
                             const double* bag_weights, std::size_t n_records,
                             std::size_t n_bags, double* grad_hist, double* hess_hist) {
  for (std::size_t i = 0; i < n_records; ++i) {
    const double* wi = bag_weights + i * n_bags;
    double* gh = grad_hist + static_cast<std::size_t>(bins[i]) * n_bags;
    double* hh = hess_hist + static_cast<std::size_t>(bins[i]) * n_bags;
    const double g = grad[i];
    const double h = hess[i];
    for (std::size_t b = 0; b < n_bags; ++b) {
      gh[b] += wi[b] * g;
      hh[b] += wi[b] * h;
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{dot_scalar,       axpy_scalar,
                                 gemv_scalar,      gemv_t_acc_scalar,
                                 ger_scalar,       bagged_histogram_scalar};
  return table;
}

}  // namespace duacm::simd::detail
