#pragma once

#include <string>

#include "prosma/tensor.hpp"

namespace prosma {

/// Writes a binary (P5, maxval 255) PGM. image is [1,H,W] or [H,W] with
/// values in [0,1]; bytes are round(v*255). Exact layout:
/// "P5\n<width> <height>\n255\n" followed by width*height raw bytes.
void write_pgm(const std::string& path, const Tensor& image);

/// Reads a P5 PGM back as [1,H,W] with values byte/255. Malformed input
/// raises ParseError naming the byte offset.
Tensor read_pgm(const std::string& path);

}  // namespace prosma
