#pragma once

namespace automoe {

// Floating-point precision is fixed per build of the core library.
#if defined(AUTOMOE_REAL_DOUBLE)
using Real = double;
inline constexpr const char* kPrecisionName = "f64";
#else
using Real = float;
inline constexpr const char* kPrecisionName = "f32";
#endif

}  // namespace automoe
