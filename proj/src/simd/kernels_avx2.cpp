// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma
// and must only be entered after a runtime CPU check (see dispatch.cpp).

#include "duacm/simd/kernels.hpp"

#include <immintrin.h>

namespace duacm::simd::detail {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  const __m128d sh = _mm_unpackhi_pd(s, s);
  return _mm_cvtsd_f64(_mm_add_sd(s, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_avx2(const double* w, const double* x, const double* bias, double* y,
               std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double b = bias ? bias[r] : 0.0;
    y[r] = b + dot_avx2(w + r * cols, x, cols);
  }
}

void gemv_t_acc_avx2(const double* w, const double* v, double* y, std::size_t rows,
                     std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy_avx2(v[r], w + r * cols, y, cols);
}

void ger_avx2(double alpha, const double* u, const double* v, double* w, std::size_t rows,
              std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy_avx2(alpha * u[r], v, w + r * cols, cols);
}

void bagged_histogram_avx2(const std::uint16_t* bins, const double* grad, const double* hess,
                           const double* bag_weights, std::size_t n_records, std::size_t n_bags,
                           double* grad_hist, double* hess_hist) {
  for (std::size_t i = 0; i < n_records; ++i) {
    const double* wi = bag_weights + i * n_bags;
    double* gh = grad_hist + static_cast<std::size_t>(bins[i]) * n_bags;
    double* hh = hess_hist + static_cast<std::size_t>(bins[i]) * n_bags;
    const __m256d vg = _mm256_set1_pd(grad[i]);
    const __m256d vh = _mm256_set1_pd(hess[i]);
    std::size_t b = 0;
    for (; b + 4 <= n_bags; b += 4) {
      const __m256d vw = _mm256_loadu_pd(wi + b);
      _mm256_storeu_pd(gh + b, _mm256_fmadd_pd(vw, vg, _mm256_loadu_pd(gh + b)));
      _mm256_storeu_pd(hh + b, _mm256_fmadd_pd(vw, vh, _mm256_loadu_pd(hh + b)));
    }
    for (; b < n_bags; ++b) {
      gh[b] += wi[b] * grad[i];
      hh[b] += wi[b] * hess[i];
    }
  }
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{dot_avx2,     axpy_avx2,
                                 gemv_avx2,    gemv_t_acc_avx2,
                                 ger_avx2,     bagged_histogram_avx2};
  return table;
}

}  // namespace duacm::simd::detail
