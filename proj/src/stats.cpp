#include "mvbed/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvbed {

double stable_sum(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0, comp = 0.0;
  for (double v : sorted) {
    double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

MeanSe mean_se(std::span<const double> values) {
  MeanSe out;
  out.count = values.size();
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = stable_sum(values) / n;
  if (values.size() > 1) {
    std::vector<double> dev;
    dev.reserve(values.size());
    for (double v : values) dev.push_back((v - out.mean) * (v - out.mean));
    out.se = std::sqrt(stable_sum(dev) / (n - 1.0) / n);
  }
  return out;
}

std::vector<double> rolling_mean(std::span<const double> values, std::size_t window) {
  if (window == 0) throw std::invalid_argument("rolling_mean: window must be positive");
  std::vector<double> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    out.push_back(stable_sum(values.subspan(lo, i + 1 - lo)) / static_cast<double>(i + 1 - lo));
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace mvbed
