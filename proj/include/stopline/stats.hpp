#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace stopline {

/// Kolmogorov limiting survival function Q(lambda) = 2 sum (-1)^{j-1} e^{-2 j^2 lambda^2}.
inline double kolmogorov_q(double lambda) {
  if (lambda < 0.2)
    return 1.0;
  const double a2 = -2.0 * lambda * lambda;
  double sum = 0, sign = 1, prev = 0;
  for (int j = 1; j <= 200; ++j) {
    const double term = sign * 2.0 * std::exp(a2 * j * j);
    sum += term;
    if (std::abs(term) <= 1e-10 * prev || std::abs(term) <= 1e-16 * sum)
      return std::clamp(sum, 0.0, 1.0);
    sign = -sign;
    prev = std::abs(term);
  }
  return 1.0;
}

struct KsResult {
  double statistic = 0;
  double p_value = 1;
};

/// Two-sample Kolmogorov-Smirnov test with the small-sample correction
/// lambda = (sqrt(Ne) + 0.12 + 0.11 / sqrt(Ne)) D.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("ks_two_sample: both samples must be nonempty");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = double(a.size()), nb = double(b.size());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v)
      ++i;
    while (j < b.size() && b[j] == v)
      ++j;
    d = std::max(d, std::abs(double(i) / na - double(j) / nb));
  }
  const double en = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_q((en + 0.12 + 0.11 / en) * d)};
}

} // namespace stopline
