#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"

#include "duacm/simd/kernels.hpp"

using namespace duacm;
using simd::Backend;

namespace {

std::vector<Backend> vector_backends() {
  std::vector<Backend> out;
  if (simd::backend_supported(Backend::kAvx2)) out.push_back(Backend::kAvx2);
  return out;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a[i] - b[i]) <= tol * (1.0 + std::abs(b[i])));
  }
}

}  // namespace

TEST_SUITE("simd") {

TEST_CASE("scalar backend is always available and named") {
  CHECK(simd::backend_supported(Backend::kScalar));
  CHECK(simd::backend_name(Backend::kScalar) == "scalar");
  CHECK(simd::backend_name(Backend::kAvx2) == "avx2");
}

TEST_CASE("vector kernels match the scalar reference across lengths including odd tails") {
  const auto& ref = simd::kernels(Backend::kScalar);
  Rng rng(11);
  for (Backend b : vector_backends()) {
    const auto& k = simd::kernels(b);
    for (std::size_t n = 0; n <= 37; ++n) {
      const auto x = testing::normal_vector(rng, n);
      const auto y = testing::normal_vector(rng, n);
      CHECK(std::abs(k.dot(x.data(), y.data(), n) - ref.dot(x.data(), y.data(), n)) <= 1e-12 * (1.0 + n));

      auto y1 = y, y2 = y;
      k.axpy(0.37, x.data(), y1.data(), n);
      ref.axpy(0.37, x.data(), y2.data(), n);
      check_close(y1, y2, 1e-14);
    }
  }
}

TEST_CASE("matrix kernels match the scalar reference for ragged shapes") {
  const auto& ref = simd::kernels(Backend::kScalar);
  Rng rng(12);
  for (Backend b : vector_backends()) {
    const auto& k = simd::kernels(b);
    for (std::size_t rows : {1u, 3u, 5u, 8u, 13u}) {
      for (std::size_t cols : {1u, 2u, 4u, 7u, 9u, 64u, 65u}) {
        const auto w = testing::normal_vector(rng, rows * cols);
        const auto x = testing::normal_vector(rng, cols);
        const auto v = testing::normal_vector(rng, rows);
        const auto bias = testing::normal_vector(rng, rows);

        std::vector<double> y1(rows), y2(rows);
        k.gemv(w.data(), x.data(), bias.data(), y1.data(), rows, cols);
        ref.gemv(w.data(), x.data(), bias.data(), y2.data(), rows, cols);
        check_close(y1, y2, 1e-12);
        k.gemv(w.data(), x.data(), nullptr, y1.data(), rows, cols);
        ref.gemv(w.data(), x.data(), nullptr, y2.data(), rows, cols);
        check_close(y1, y2, 1e-12);

        auto t1 = testing::normal_vector(rng, cols);
        auto t2 = t1;
        k.gemv_t_acc(w.data(), v.data(), t1.data(), rows, cols);
        ref.gemv_t_acc(w.data(), v.data(), t2.data(), rows, cols);
        check_close(t1, t2, 1e-12);

        auto w1 = w, w2 = w;
        k.ger(-0.5, v.data(), x.data(), w1.data(), rows, cols);
        ref.ger(-0.5, v.data(), x.data(), w2.data(), rows, cols);
        check_close(w1, w2, 1e-14);
      }
    }
  }
}

TEST_CASE("bagged histogram matches the scalar reference and a direct loop") {
  const auto& ref = simd::kernels(Backend::kScalar);
  Rng rng(13);
  for (std::size_t n_bags : {1u, 3u, 4u, 16u, 17u}) {
    const std::size_t n = 101, n_bins = 9;
    std::vector<std::uint16_t> bins(n);
    for (auto& b : bins) b = static_cast<std::uint16_t>(uniform_index(rng, n_bins));
    const auto grad = testing::normal_vector(rng, n);
    const auto hess = testing::normal_vector(rng, n);
    std::vector<double> weights(n * n_bags);
    for (auto& w : weights) w = static_cast<double>(uniform_index(rng, 3));

    std::vector<double> g_direct(n_bins * n_bags, 0.0), h_direct(n_bins * n_bags, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t b = 0; b < n_bags; ++b) {
        g_direct[bins[i] * n_bags + b] += weights[i * n_bags + b] * grad[i];
        h_direct[bins[i] * n_bags + b] += weights[i * n_bags + b] * hess[i];
      }
    }
    std::vector<double> g(n_bins * n_bags, 0.0), h(n_bins * n_bags, 0.0);
    ref.bagged_histogram(bins.data(), grad.data(), hess.data(), weights.data(), n, n_bags,
                         g.data(), h.data());
    check_close(g, g_direct, 1e-13);
    check_close(h, h_direct, 1e-13);
    for (Backend b : vector_backends()) {
      std::vector<double> g2(n_bins * n_bags, 0.0), h2(n_bins * n_bags, 0.0);
      simd::kernels(b).bagged_histogram(bins.data(), grad.data(), hess.data(), weights.data(), n,
                                        n_bags, g2.data(), h2.data());
      check_close(g2, g_direct, 1e-13);
      check_close(h2, h_direct, 1e-13);
    }
  }
}

TEST_CASE("dispatching wrappers follow the selected backend") {
  const Backend original = simd::active_backend();
  const std::vector<double> a = {1, 2, 3, 4, 5}, b = {5, 4, 3, 2, 1};
  simd::set_active_backend(Backend::kScalar);
  CHECK(simd::active_backend() == Backend::kScalar);
  CHECK(simd::dot(a, b) == doctest::Approx(35.0));
  for (Backend be : vector_backends()) {
    simd::set_active_backend(be);
    CHECK(simd::active_backend() == be);
    CHECK(simd::dot(a, b) == doctest::Approx(35.0));
  }
  simd::set_active_backend(original);
}

}  // TEST_SUITE
