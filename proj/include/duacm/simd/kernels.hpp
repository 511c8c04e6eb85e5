#pragma once

// Dense arithmetic kernels shared by the model fitters.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant. The variant is picked once at first use from the CPU
// feature bits; DUACM_SIMD=scalar in the environment forces the reference
// path. Variants agree with the reference up to floating-point reassociation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace duacm::simd {

enum class Backend { kScalar, kAvx2 };

std::string_view backend_name(Backend backend);

/// Whether the running CPU can execute the given backend.
bool backend_supported(Backend backend);

/// The backend used by the dispatching entry points below.
Backend active_backend();

/// Overrides the dispatch choice (tests). Throws if unsupported.
void set_active_backend(Backend backend);

/// Raw kernel table. Matrices are row-major, `rows x cols`.
struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = W x + bias   (bias may be null)
  void (*gemv)(const double* w, const double* x, const double* bias, double* y,
               std::size_t rows, std::size_t cols);
  // y += W^T v
  void (*gemv_t_acc)(const double* w, const double* v, double* y, std::size_t rows,
                     std::size_t cols);
  // W += alpha * u v^T
  void (*ger)(double alpha, const double* u, const double* v, double* w, std::size_t rows,
              std::size_t cols);
  // For every record i with bin k = bins[i] and every bag b < n_bags:
  //   grad_hist[k * n_bags + b] += bag_weights[i * n_bags + b] * grad[i]
  //   hess_hist[k * n_bags + b] += bag_weights[i * n_bags + b] * hess[i]
  void (*bagged_histogram)(const std::uint16_t* bins, const double* grad, const double* hess,
                           const double* bag_weights, std::size_t n_records, std::size_t n_bags,
                           double* grad_hist, double* hess_hist);
};

const KernelTable& kernels(Backend backend);

// Dispatching wrappers over spans.

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void gemv(std::span<const double> w, std::span<const double> x, std::span<const double> bias,
          std::span<double> y);
void gemv_t_acc(std::span<const double> w, std::span<const double> v, std::span<double> y);
void ger(double alpha, std::span<const double> u, std::span<const double> v,
         std::span<double> w);
void bagged_histogram(std::span<const std::uint16_t> bins, std::span<const double> grad,
                      std::span<const double> hess, std::span<const double> bag_weights,
                      std::size_t n_bags, std::span<double> grad_hist,
                      std::span<double> hess_hist);

namespace detail {
const KernelTable& scalar_table();
#if defined(__x86_64__)
const KernelTable& avx2_table();
#endif
}  // namespace detail

}  // namespace duacm::simd
