#pragma once

namespace gaot {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace gaot
