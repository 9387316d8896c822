#pragma once

namespace d3m {

inline constexpr const char* kVersion = "0.1.0";

} // namespace d3m
