#include "masktab/numerics/functions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "masktab/errors.hpp"

namespace masktab::num {

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                               std::span<const double> beta) {
  if (x.empty() || x.size() != gamma.size() || x.size() != beta.size()) {
    throw DimensionError("layer_norm: x, gamma and beta must share a non-zero length");
  }
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (const double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (const double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gamma[i] * (x[i] - mean) * rstd + beta[i];
  return out;
}

std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) throw DimensionError("softmax of an empty vector");
  for (const double v : x) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  const double top = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

}  // namespace masktab::num
