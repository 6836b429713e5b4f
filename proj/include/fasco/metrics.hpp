#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fasco {

inline double q_error(double estimated, double actual) {
  if (!(estimated > 0.0) || !(actual > 0.0))
    throw std::invalid_argument("q_error requires strictly positive inputs");
  return std::max(estimated / actual, actual / estimated);
}

struct ErrorSummary {
  double mean = 0;
  double p50 = 0;
  double p90 = 0;
  double p95 = 0;
  double p99 = 0;
  double max = 0;
  std::size_t n = 0;
};

// Percentiles use the nearest-rank definition: the value at position
// ceil(k/100 * n) of the sorted sample, 1-based.
inline ErrorSummary summarize(std::vector<double> errors) {
  if (errors.empty()) throw std::invalid_argument("summarize requires a non-empty sample");
  std::sort(errors.begin(), errors.end());
  const std::size_t n = errors.size();
  auto rank = [&](std::size_t k) {
    std::size_t idx = (k * n + 99) / 100;  // ceil(k*n/100)
    if (idx == 0) idx = 1;
    return errors[idx - 1];
  };
  ErrorSummary s;
  s.n = n;
  double sum = 0;
  for (double e : errors) sum += e;
  s.mean = sum / static_cast<double>(n);
  s.p50 = rank(50);
  s.p90 = rank(90);
  s.p95 = rank(95);
  s.p99 = rank(99);
  s.max = errors.back();
  return s;
}

}  // namespace fasco
