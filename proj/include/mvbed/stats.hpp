#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mvbed {

// Compensated (Neumaier) sum of the values in ascending order. Sorting first
// makes the result independent of input order.
double stable_sum(std::span<const double> values);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t count = 0;
};

// Mean and standard error (sample standard deviation / sqrt(n)).
MeanSe mean_se(std::span<const double> values);

// Trailing rolling mean over `window` points (shorter at the start).
std::vector<double> rolling_mean(std::span<const double> values, std::size_t window);

double median(std::vector<double> values);

}  // namespace mvbed
