#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <string>

#include "dsim/error.hpp"

namespace dsim {

/// Simulated time. One tick is one microsecond of virtual time. Arithmetic is
/// checked: overflow raises instead of silently producing a wrong clock.
class VirtualTime {
 public:
  using Rep = std::int64_t;
  static constexpr Rep kTicksPerSecond = 1'000'000;

  constexpr VirtualTime() = default;
  constexpr explicit VirtualTime(Rep ticks) : ticks_(ticks) {}

  static constexpr VirtualTime zero() { return VirtualTime{0}; }
  static constexpr VirtualTime max() {
    return VirtualTime{std::numeric_limits<Rep>::max()};
  }

  constexpr Rep ticks() const { return ticks_; }

  friend constexpr auto operator<=>(VirtualTime, VirtualTime) = default;

  friend VirtualTime operator+(VirtualTime a, VirtualTime b) {
    Rep r = 0;
    if (__builtin_add_overflow(a.ticks_, b.ticks_, &r)) {
      throw StateError("virtual time overflow in +");
    }
    return VirtualTime{r};
  }

  friend VirtualTime operator-(VirtualTime a, VirtualTime b) {
    Rep r = 0;
    if (__builtin_sub_overflow(a.ticks_, b.ticks_, &r)) {
      throw StateError("virtual time overflow in -");
    }
    return VirtualTime{r};
  }

  VirtualTime& operator+=(VirtualTime o) { return *this = *this + o; }

  std::string str() const { return std::to_string(ticks_); }

 private:
  Rep ticks_ = 0;
};

/// Identifier spaces. Agents and logical processes live in separate spaces;
/// both are plain integers on the wire.
using AgentId = std::uint64_t;
using LpId = std::uint64_t;
using ContextId = std::uint64_t;

/// Logical source id 0 is reserved for scenario-injected (system) events.
inline constexpr LpId kSystemSource = 0;

}  // namespace dsim
