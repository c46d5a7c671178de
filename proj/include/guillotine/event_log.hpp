#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "guillotine/common.hpp"
#include "guillotine/crypto.hpp"

namespace guillotine {

using Json = nlohmann::json;

/// One sequence-numbered simulation event. `payload` is serialised canonically
/// (object keys sorted), so the JSON line is a pure function of the record.
struct EventRecord {
  std::uint64_t seq = 0;
  Tick tick = 0;
  std::string source;
  std::string type;
  Json payload = Json::object();

  [[nodiscard]] std::string to_json_line() const;
  [[nodiscard]] Json to_json() const;
  static std::optional<EventRecord> from_json(const Json& j);
};

/// Append-only event log; owns the logical clock of the simulation.
class EventLog {
 public:
  using Listener = std::function<void(const EventRecord&)>;

  [[nodiscard]] Tick now() const noexcept { return now_; }
  void set_now(Tick t) noexcept { now_ = t; }

  const EventRecord& append(std::string_view source, std::string_view type,
                            Json payload = Json::object());

  [[nodiscard]] const std::vector<EventRecord>& records() const noexcept { return records_; }
  [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }

  /// Listeners see every record exactly once, in sequence order.
  std::size_t subscribe(Listener listener);
  void unsubscribe(std::size_t handle);

  [[nodiscard]] std::string to_jsonl() const;
  /// SHA-256 over the JSON Lines rendering, as hex.
  [[nodiscard]] std::string digest_hex() const;

  /// Records of one (source, type) pair; empty `type` matches all types of `source`.
  [[nodiscard]] std::vector<const EventRecord*> filter(std::string_view source,
                                                       std::string_view type = {}) const;

 private:
  Tick now_ = 0;
  std::vector<EventRecord> records_;
  std::vector<std::optional<Listener>> listeners_;
};

}  // namespace guillotine
