#pragma once

namespace srdo {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace srdo
