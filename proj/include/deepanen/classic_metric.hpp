#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "deepanen/archive.hpp"

namespace deepanen {

enum class ZeroSigmaPolicy {
  SkipVariable,  // the variable contributes 0 and is counted
};

/// Weights, climatological standard deviations and half-window of the
/// weighted-Euclidean analog metric.
class MetricConfig {
 public:
  MetricConfig(std::vector<double> weights, std::vector<double> sigma, std::size_t half_window,
               ZeroSigmaPolicy policy = ZeroSigmaPolicy::SkipVariable)
      : weights_(std::move(weights)), sigma_(std::move(sigma)), half_window_(half_window), policy_(policy) {
    if (weights_.size() != sigma_.size())
      throw ConfigError("metric config: " + std::to_string(weights_.size()) + " weights but " +
                        std::to_string(sigma_.size()) + " sigmas");
    bool any_positive = false;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (!std::isfinite(weights_[i]) || weights_[i] < 0.0)
        throw ConfigError("metric config: weight " + std::to_string(i) + " must be finite and >= 0");
      if (!std::isfinite(sigma_[i]) || sigma_[i] < 0.0)
        throw ConfigError("metric config: sigma " + std::to_string(i) + " must be finite and >= 0");
      any_positive = any_positive || weights_[i] > 0.0;
    }
    if (!any_positive) throw ConfigError("metric config: at least one weight must be positive");
  }

  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& sigma() const { return sigma_; }
  std::size_t half_window() const { return half_window_; }
  std::size_t n_variables() const { return weights_.size(); }
  std::size_t window_length() const { return 2 * half_window_ + 1; }
  ZeroSigmaPolicy zero_sigma_policy() const { return policy_; }

 private:
  std::vector<double> weights_;
  std::vector<double> sigma_;
  std::size_t half_window_;
  ZeroSigmaPolicy policy_;
};

struct Dissimilarity {
  double score = 0.0;
  std::size_t skipped_variables = 0;  // variables with sigma == 0
};

/// sum_i (w_i / sigma_i) * sqrt(sum_j (F_ij - A_ij)^2) over the window positions j.
inline Dissimilarity dissimilarity(const ForecastWindow& target, const ForecastWindow& candidate,
                                   const MetricConfig& cfg) {
  if (target.n_variables != cfg.n_variables() || candidate.n_variables != cfg.n_variables() ||
      target.length != cfg.window_length() || candidate.length != cfg.window_length())
    throw DataError("dissimilarity: window shape does not match metric config");
  Dissimilarity d;
  const std::size_t len = cfg.window_length();
  for (std::size_t i = 0; i < cfg.n_variables(); ++i) {
    if (cfg.sigma()[i] == 0.0) {
      ++d.skipped_variables;
      continue;
    }
    const double w = cfg.weights()[i];
    if (w == 0.0) continue;
    const double* f = &target.data[i * len];
    const double* a = &candidate.data[i * len];
    double ss = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const double diff = f[j] - a[j];
      ss += diff * diff;
    }
    d.score += w / cfg.sigma()[i] * std::sqrt(ss);
  }
  return d;
}

}  // namespace deepanen
