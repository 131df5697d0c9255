#pragma once

#include <string>

#include "vqclone/model.hpp"

namespace vqclone::checkpoint {

// Versioned binary checkpoint: magic, format version, mode, K, D, A, V and
// the remaining dimensions, then named parameter blocks as little-endian
// 64-bit floats. save/load round-trips are bit-exact.
void save(const model::ModelState& m, const std::string& path);
model::ModelState load(const std::string& path);

}  // namespace vqclone::checkpoint
