#pragma once

#include <span>
#include <vector>

namespace duacm {

/// Per-feature centering and scaling learned from training rows.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> sd;  // constant features carry sd 1

  static Standardization fit(const std::vector<std::vector<double>>& rows, std::size_t n_features);
  void apply(std::span<const double> x, std::span<double> out) const;
  bool operator==(const Standardization&) const = default;
};

}  // namespace duacm
