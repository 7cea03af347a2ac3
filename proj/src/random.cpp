#include "solodiff/random.hpp"

namespace solodiff {

Tensor RandomSource::normal_tensor(Shape shape) {
  Tensor t(shape);
  if (zero_noise_) return t;
  for (float& v : t.data()) v = normal_(engine_);
  return t;
}

}  // namespace solodiff
