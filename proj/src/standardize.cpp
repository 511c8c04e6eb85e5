#include "duacm/standardize.hpp"

#include <cmath>

namespace duacm {

Standardization Standardization::fit(const std::vector<std::vector<double>>& rows,
                                     std::size_t n_features) {
  Standardization st;
  st.mean.assign(n_features, 0.0);
  st.sd.assign(n_features, 1.0);
  if (rows.empty()) return st;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < n_features; ++j) st.mean[j] += r[j];
  }
  for (auto& m : st.mean) m /= n;
  std::vector<double> var(n_features, 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < n_features; ++j) {
      const double c = r[j] - st.mean[j];
      var[j] += c * c;
    }
  }
  for (std::size_t j = 0; j < n_features; ++j) {
    const double sd = std::sqrt(var[j] / n);
    // Constant columns (relative to their magnitude) keep the sentinel sd 1;
    // centering then makes them identically zero.
    if (sd > 1e-12 * (1.0 + std::abs(st.mean[j]))) {
      st.sd[j] = sd;
    } else {
      st.sd[j] = 1.0;
      st.mean[j] = rows.front()[j];
    }
  }
  return st;
}

void Standardization::apply(std::span<const double> x, std::span<double> out) const {
  for (std::size_t j = 0; j < mean.size(); ++j) out[j] = (x[j] - mean[j]) / sd[j];
}

}  // namespace duacm
