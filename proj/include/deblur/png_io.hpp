#pragma once

#include <string>
#include <vector>

#include "deblur/tensor.hpp"

// Strict 8-bit RGB PNG codec. Anything else (palette, gray, alpha, 16-bit)
// is a decode error. Decode maps byte v to v/255; encode clips to [0,1] and
// rounds half away from zero, so decode(encode(decode(x))) == decode(x).

namespace deblur {

Tensor decode_png_bytes(const unsigned char* bytes, std::size_t size); // 3 x H x W
Tensor decode_png(const std::string& path);

std::vector<unsigned char> encode_png_bytes(const Tensor& image);
void encode_png(const std::string& path, const Tensor& image);

} // namespace deblur
