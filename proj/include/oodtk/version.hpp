#pragma once

namespace oodtk {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace oodtk
