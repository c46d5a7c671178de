#include "guillotine/event_log.hpp"

namespace guillotine {

Json EventRecord::to_json() const {
  return Json{{"seq", seq}, {"tick", tick}, {"source", source}, {"type", type},
              {"payload", payload}};
}

std::string EventRecord::to_json_line() const { return to_json().dump(); }

std::optional<EventRecord> EventRecord::from_json(const Json& j) {
  if (!j.is_object()) return std::nullopt;
  for (const char* key : {"seq", "tick", "source", "type", "payload"}) {
    if (!j.contains(key)) return std::nullopt;
  }
  EventRecord r;
  try {
    r.seq = j.at("seq").get<std::uint64_t>();
    r.tick = j.at("tick").get<Tick>();
    r.source = j.at("source").get<std::string>();
    r.type = j.at("type").get<std::string>();
    r.payload = j.at("payload");
  } catch (const Json::exception&) {
    return std::nullopt;
  }
  return r;
}

const EventRecord& EventLog::append(std::string_view source, std::string_view type,
                                    Json payload) {
  EventRecord r;
  r.seq = records_.size();
  r.tick = now_;
  r.source = source;
  r.type = type;
  r.payload = std::move(payload);
  records_.push_back(std::move(r));
  const auto& stored = records_.back();
  for (auto& l : listeners_) {
    if (l) (*l)(stored);
  }
  return stored;
}

std::size_t EventLog::subscribe(Listener listener) {
  listeners_.emplace_back(std::move(listener));
  return listeners_.size() - 1;
}

void EventLog::unsubscribe(std::size_t handle) {
  if (handle < listeners_.size()) listeners_[handle].reset();
}

std::string EventLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    out += r.to_json_line();
    out.push_back('\n');
  }
  return out;
}

std::string EventLog::digest_hex() const {
  auto text = to_jsonl();
  auto d = crypto::sha256(text);
  return crypto::to_hex(d);
}

std::vector<const EventRecord*> EventLog::filter(std::string_view source,
                                                 std::string_view type) const {
  std::vector<const EventRecord*> out;
  for (const auto& r : records_) {
    if (r.source == source && (type.empty() || r.type == type)) out.push_back(&r);
  }
  return out;
}

}  // namespace guillotine
