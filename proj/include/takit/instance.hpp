#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "takit/geometry.hpp"

namespace takit {

/// A (box, transcript) pair; OCR priors and engine candidates share it.
struct Prior {
  Box box;
  std::string text;
};

/// One grounded text item of the training-data instance schema.
struct TextInstance {
  std::string image_id;
  ImageSize image;
  Box box;
  std::string transcript;
  std::string source;
  std::optional<std::vector<uint32_t>> mask_rle;  // row-major, zero-run first
  std::optional<std::vector<Prior>> priors;
};

}  // namespace takit
