#pragma once

namespace mollae {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace mollae
