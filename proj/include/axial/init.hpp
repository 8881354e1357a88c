#pragma once

#include <cstddef>

#include "axial/random.hpp"
#include "axial/tensor.hpp"

namespace axial {

/// I.i.d. uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace axial
