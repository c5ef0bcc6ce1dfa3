#pragma once

#include <string>
#include <vector>

#include "unihand/tensor.hpp"

namespace unihand {

// Binary tensor container.
//
//   magic   "UHND"
//   version u32 LE (currently 1)
//   dtype   u8    (0 = float32, 1 = float64)
//   ndim    u32 LE
//   dims    ndim x u32 LE
//   payload row-major values, little-endian
//
// float64 round-trips bit-exactly; float32 narrows on save.

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

void save_tensor(const std::string& path, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor load_tensor(const std::string& path);

void save_raw(const std::string& path, const Shape& shape, const std::vector<double>& data,
              Dtype dtype = Dtype::f64);
std::pair<Shape, std::vector<double>> load_raw(const std::string& path);

} // namespace unihand
