#pragma once

namespace stylolab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace stylolab
