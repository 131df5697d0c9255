#include "vqclone/tensor.hpp"

#include <cstring>

namespace vqclone {

bool Tensor::bit_equal(const Tensor& o) const {
  if (!same_shape(o)) return false;
  if (data_.empty()) return true;
  return std::memcmp(data_.data(), o.data_.data(),
                     data_.size() * sizeof(double)) == 0;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace vqclone
