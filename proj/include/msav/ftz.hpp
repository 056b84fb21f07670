#pragma once

#include <filesystem>

#include "msav/tensor.hpp"

namespace msav {

// FTZ tensor file: magic "FTZ1", one unsigned byte rank, rank little-endian
// uint32 dims, then row-major little-endian IEEE-754 float32 data.
// Round-trips are bit-exact.

void write_ftz(const std::filesystem::path& path, const Tensor& t);

Tensor read_ftz(const std::filesystem::path& path, bool requires_grad = false);

}  // namespace msav
