#pragma once

#include <cstddef>

namespace marsail {

inline constexpr std::size_t kDamageClasses = 26;
inline constexpr std::size_t kPartClasses = 61;
inline constexpr std::size_t kFakeClasses = 7;

}  // namespace marsail
