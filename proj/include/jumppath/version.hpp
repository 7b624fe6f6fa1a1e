#pragma once

namespace jumppath {

inline constexpr const char* version_string = "0.1.0";

}  // namespace jumppath
