#include <atomic>
#include <cstdlib>
#include <cstring>

#include "duacm/error.hpp"
#include "duacm/simd/kernels.hpp"

namespace duacm::simd {
namespace {

Backend detect_backend() {
  if (const char* env = std::getenv("DUACM_SIMD"); env && std::strcmp(env, "scalar") == 0) {
    return Backend::kScalar;
  }
  return backend_supported(Backend::kAvx2) ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& active_slot() {
  static std::atomic<Backend> slot{detect_backend()};
  return slot;
}

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ValidationError(std::string("simd: length mismatch in ") + what);
}

}  // namespace

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool backend_supported(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      return true;
    case Backend::kAvx2:
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() { return active_slot().load(std::memory_order_relaxed); }

void set_active_backend(Backend backend) {
  if (!backend_supported(backend)) {
    throw ValidationError("simd backend not supported on this CPU: " +
                          std::string(backend_name(backend)));
  }
  active_slot().store(backend, std::memory_order_relaxed);
}

const KernelTable& kernels(Backend backend) {
#if defined(__x86_64__)
  if (backend == Backend::kAvx2) return detail::avx2_table();
#endif
  return detail::scalar_table();
}

namespace {
const KernelTable& active() { return kernels(active_backend()); }
}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  check_same(a.size(), b.size(), "dot");
  return active().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same(x.size(), y.size(), "axpy");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void gemv(std::span<const double> w, std::span<const double> x, std::span<const double> bias,
          std::span<double> y) {
  check_same(w.size(), y.size() * x.size(), "gemv");
  if (!bias.empty()) check_same(bias.size(), y.size(), "gemv bias");
  active().gemv(w.data(), x.data(), bias.empty() ? nullptr : bias.data(), y.data(), y.size(),
                x.size());
}

void gemv_t_acc(std::span<const double> w, std::span<const double> v, std::span<double> y) {
  check_same(w.size(), v.size() * y.size(), "gemv_t_acc");
  active().gemv_t_acc(w.data(), v.data(), y.data(), v.size(), y.size());
}

void ger(double alpha, std::span<const double> u, std::span<const double> v,
         std::span<double> w) {
  check_same(w.size(), u.size() * v.size(), "ger");
  active().ger(alpha, u.data(), v.data(), w.data(), u.size(), v.size());
}

void bagged_histogram(std::span<const std::uint16_t> bins, std::span<const double> grad,
                      std::span<const double> hess, std::span<const double> bag_weights,
                      std::size_t n_bags, std::span<double> grad_hist,
                      std::span<double> hess_hist) {
  check_same(bins.size(), grad.size(), "bagged_histogram grad");
  check_same(bins.size(), hess.size(), "bagged_histogram hess");
  check_same(bins.size() * n_bags, bag_weights.size(), "bagged_histogram weights");
  check_same(grad_hist.size(), hess_hist.size(), "bagged_histogram histograms");
  active().bagged_histogram(bins.data(), grad.data(), hess.data(), bag_weights.data(),
                            bins.size(), n_bags, grad_hist.data(), hess_hist.data());
}

}  // namespace duacm::simd
