#pragma once

#include <cstdint>
#include <string>

#include "masktab/numerics/tensor.hpp"
#include "masktab/random.hpp"

namespace masktab::num {

/// Stream for one named parameter, so initial values do not depend on which
/// other parameters a model happens to have.
inline Rng param_rng(std::uint64_t seed, const std::string& name) {
  return Rng::keyed({seed, fnv1a64(name)});
}

/// Rounds every value to the nearest float. Trainable state is kept on the
/// float grid so that float32 checkpoints reload exactly.
void quantize_f32(Tensor& t);

Tensor truncated_normal(Shape shape, double stddev, Rng& rng);
Tensor normal(Shape shape, double stddev, Rng& rng);

}  // namespace masktab::num
