#include "masktab/numerics/init.hpp"

namespace masktab::num {

void quantize_f32(Tensor& t) {
  for (double& v : t.values) v = static_cast<double>(static_cast<float>(v));
}

Tensor truncated_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values) v = rng.truncated_normal(stddev);
  quantize_f32(t);
  return t;
}

Tensor normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values) v = rng.normal(0.0, stddev);
  quantize_f32(t);
  return t;
}

}  // namespace masktab::num
