#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace guillotine {

using Tick = std::uint64_t;
using Word = std::uint64_t;
using Address = std::uint64_t;

/// Strongly typed integer identifier. `Tag` only distinguishes the types.
template <typename Tag>
struct Id {
  std::uint32_t value = 0;

  constexpr Id() = default;
  constexpr explicit Id(std::uint32_t v) : value(v) {}

  friend constexpr auto operator<=>(const Id&, const Id&) = default;
};

struct CoreTag {};
struct RegionTag {};
struct ModelTag {};
struct AdminTag {};
struct BallotTag {};

using CoreId = Id<CoreTag>;
using RegionId = Id<RegionTag>;
using ModelId = Id<ModelTag>;
using AdminId = Id<AdminTag>;
using BallotId = Id<BallotTag>;

/// Opaque, unforgeable port token. Only the port broker mints these.
struct PortId {
  std::uint64_t value = 0;
  friend constexpr auto operator<=>(const PortId&, const PortId&) = default;
};

/// Minimal value-or-error holder; the project targets C++20, which lacks std::expected.
template <typename T, typename E>
class Outcome {
 public:
  Outcome(T value) : v_(std::in_place_index<0>, std::move(value)) {}  // NOLINT
  Outcome(E error) : v_(std::in_place_index<1>, std::move(error)) {}  // NOLINT

  [[nodiscard]] bool ok() const noexcept { return v_.index() == 0; }
  explicit operator bool() const noexcept { return ok(); }

  T& value() & {
    if (!ok()) throw std::logic_error("Outcome::value() on error");
    return std::get<0>(v_);
  }
  const T& value() const& {
    if (!ok()) throw std::logic_error("Outcome::value() on error");
    return std::get<0>(v_);
  }
  T&& value() && {
    if (!ok()) throw std::logic_error("Outcome::value() on error");
    return std::get<0>(std::move(v_));
  }
  const E& error() const {
    if (ok()) throw std::logic_error("Outcome::error() on value");
    return std::get<1>(v_);
  }

  T* operator->() { return &value(); }
  const T* operator->() const { return &value(); }

 private:
  std::variant<T, E> v_;
};

}  // namespace guillotine

template <typename Tag>
struct std::hash<guillotine::Id<Tag>> {
  std::size_t operator()(const guillotine::Id<Tag>& id) const noexcept {
    return std::hash<std::uint32_t>{}(id.value);
  }
};
