#pragma once

namespace grounder {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace grounder
