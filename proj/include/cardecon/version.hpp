#pragma once

namespace cardecon {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cardecon
