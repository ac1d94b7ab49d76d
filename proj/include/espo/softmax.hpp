#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace espo {

/// Max-subtracted log softmax of `logits / temperature`.
inline std::vector<double> log_softmax(std::span<const double> logits, double temperature = 1.0) {
  if (logits.empty()) throw std::invalid_argument("log_softmax: empty input");
  std::vector<double> scaled(logits.size());
  for (std::size_t v = 0; v < logits.size(); ++v) {
    if (!std::isfinite(logits[v])) throw std::invalid_argument("log_softmax: non-finite logit");
    scaled[v] = logits[v] / temperature;
  }
  const double peak = *std::max_element(scaled.begin(), scaled.end());
  double total = 0.0;
  for (double z : scaled) total += std::exp(z - peak);
  const double lse = peak + std::log(total);
  for (double& z : scaled) z -= lse;
  return scaled;
}

}  // namespace espo
