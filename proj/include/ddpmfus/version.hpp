#pragma once

namespace ddpmfus {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ddpmfus
