#pragma once

namespace takit {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace takit
