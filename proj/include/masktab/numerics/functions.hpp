#pragma once

#include <span>
#include <vector>

namespace masktab::num {

inline constexpr double kLayerNormEps = 1e-5;

/// gamma_i · (x_i − mean) / sqrt(var + eps) + beta_i, population variance.
std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                               std::span<const double> beta);

/// Max-shifted softmax. Throws NumericError on non-finite input.
std::vector<double> softmax(std::span<const double> x);

double sigmoid(double x);
double gelu(double x);

}  // namespace masktab::num
