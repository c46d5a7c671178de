#include "guillotine/ports.hpp"

#include <algorithm>
#include <stdexcept>

namespace guillotine::ports {
namespace {

constexpr std::uint8_t kMaxSlots = 255;

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

bool contains_bytes(std::span<const std::uint8_t> hay, const std::string& needle) {
  if (needle.empty()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

Json block_json(const BlockRule& b) {
  Json j = Json::object();
  j["device_class"] = b.device_class ? Json(to_string(*b.device_class)) : Json(nullptr);
  j["direction"] = b.direction ? Json(to_string(*b.direction)) : Json(nullptr);
  return j;
}

}  // namespace

std::string to_string(DeviceClass c) {
  switch (c) {
    case DeviceClass::network: return "network";
    case DeviceClass::storage: return "storage";
    case DeviceClass::accelerator: return "accelerator";
    case DeviceClass::actuator: return "actuator";
    case DeviceClass::clock: return "clock";
  }
  return "?";
}

std::string to_string(Direction d) {
  return d == Direction::model_to_device ? "model_to_device" : "device_to_model";
}

std::string to_string(PortState s) {
  switch (s) {
    case PortState::granted: return "granted";
    case PortState::restricted: return "restricted";
    case PortState::revoked: return "revoked";
  }
  return "?";
}

std::optional<DeviceClass> device_class_from_string(std::string_view s) {
  for (auto c : kDeviceClasses) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

std::optional<Direction> direction_from_string(std::string_view s) {
  if (s == "model_to_device" || s == "egress") return Direction::model_to_device;
  if (s == "device_to_model" || s == "ingress") return Direction::device_to_model;
  return std::nullopt;
}

std::string to_string(GrantError e) {
  switch (e) {
    case GrantError::isolation_forbids: return "isolation_forbids";
    case GrantError::no_such_device: return "no_such_device";
    case GrantError::out_of_io_memory: return "out_of_io_memory";
  }
  return "?";
}

std::string to_string(WriteStatus s) {
  switch (s) {
    case WriteStatus::queued: return "queued";
    case WriteStatus::revoked_port: return "revoked_port";
    case WriteStatus::restricted_op: return "restricted_op";
    case WriteStatus::ring_full: return "ring_full";
    case WriteStatus::no_such_port: return "no_such_port";
    case WriteStatus::payload_too_large: return "payload_too_large";
  }
  return "?";
}

guests::GuestStatus to_guest_status(WriteStatus s) {
  using G = guests::GuestStatus;
  switch (s) {
    case WriteStatus::queued: return G::ok;
    case WriteStatus::revoked_port: return G::revoked_port;
    case WriteStatus::restricted_op: return G::restricted_op;
    case WriteStatus::ring_full: return G::ring_full;
    case WriteStatus::no_such_port: return G::no_such_port;
    case WriteStatus::payload_too_large: return G::payload_too_large;
  }
  return G::no_such_port;
}

// --- RestrictionSet --------------------------------------------------------

bool RestrictionSet::blocks_traffic(DeviceClass c, Direction d) const {
  return std::any_of(blocks.begin(), blocks.end(),
                     [&](const BlockRule& b) { return b.matches(c, d); });
}

bool RestrictionSet::affects(DeviceClass c) const {
  if (!deny_patterns.empty() || rate_cap) return true;
  return blocks_traffic(c, Direction::model_to_device) ||
         blocks_traffic(c, Direction::device_to_model);
}

bool RestrictionSet::loosens(const RestrictionSet& current) const {
  for (const auto& b : current.blocks) {
    if (!blocks.contains(b)) return true;
  }
  for (const auto& p : current.deny_patterns) {
    if (!deny_patterns.contains(p)) return true;
  }
  if (current.rate_cap && (!rate_cap || *rate_cap > *current.rate_cap)) return true;
  return false;
}

Json to_json(const RestrictionSet& r) {
  Json blocks = Json::array();
  for (const auto& b : r.blocks) blocks.push_back(block_json(b));
  Json j{{"blocks", std::move(blocks)}, {"deny_patterns", r.deny_patterns}};
  j["rate_cap"] = r.rate_cap ? Json(*r.rate_cap) : Json(nullptr);
  return j;
}

RestrictionSet restriction_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("restriction set must be an object");
  RestrictionSet r;
  try {
    if (j.contains("blocks")) {
      for (const auto& bj : j.at("blocks")) {
        BlockRule b;
        if (bj.is_string()) {
          // Shorthand "network-egress", "storage", "ingress".
          auto s = bj.get<std::string>();
          auto dash = s.find('-');
          std::string cls = dash == std::string::npos ? s : s.substr(0, dash);
          std::string dir = dash == std::string::npos ? "" : s.substr(dash + 1);
          if (auto c = device_class_from_string(cls)) {
            b.device_class = c;
          } else if (auto d = direction_from_string(cls); d && dir.empty()) {
            b.direction = d;
          } else {
            throw std::invalid_argument("unknown block '" + s + "'");
          }
          if (!dir.empty()) {
            auto d = direction_from_string(dir);
            if (!d) throw std::invalid_argument("unknown direction in '" + s + "'");
            b.direction = d;
          }
        } else {
          if (bj.contains("device_class") && !bj.at("device_class").is_null()) {
            auto c = device_class_from_string(bj.at("device_class").get<std::string>());
            if (!c) throw std::invalid_argument("unknown device class");
            b.device_class = c;
          }
          if (bj.contains("direction") && !bj.at("direction").is_null()) {
            auto d = direction_from_string(bj.at("direction").get<std::string>());
            if (!d) throw std::invalid_argument("unknown direction");
            b.direction = d;
          }
        }
        r.blocks.insert(b);
      }
    }
    if (j.contains("deny_patterns")) {
      for (const auto& p : j.at("deny_patterns")) r.deny_patterns.insert(p.get<std::string>());
    }
    if (j.contains("rate_cap") && !j.at("rate_cap").is_null()) {
      r.rate_cap = j.at("rate_cap").get<std::uint32_t>();
    }
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("malformed restriction set: ") + e.what());
  }
  return r;
}

// --- AuditRecord ------------------------------------------------------------

Json AuditRecord::to_json() const {
  return Json{{"seq", seq},
              {"tick", tick},
              {"port_id", port_id.value},
              {"direction", to_string(direction)},
              {"digest", crypto::to_hex(payload_digest)},
              {"payload_b64", crypto::to_base64(payload)},
              {"truncated", truncated}};
}

std::optional<AuditRecord> AuditRecord::from_json(const Json& j) {
  try {
    AuditRecord r;
    r.seq = j.at("seq").get<std::uint64_t>();
    r.tick = j.at("tick").get<Tick>();
    r.port_id.value = j.at("port_id").get<std::uint64_t>();
    auto d = direction_from_string(j.at("direction").get<std::string>());
    if (!d) return std::nullopt;
    r.direction = *d;
    auto digest = crypto::from_hex(j.at("digest").get<std::string>());
    if (!digest || digest->size() != r.payload_digest.size()) return std::nullopt;
    std::copy(digest->begin(), digest->end(), r.payload_digest.begin());
    auto payload = crypto::from_base64(j.at("payload_b64").get<std::string>());
    if (!payload) return std::nullopt;
    r.payload = std::move(*payload);
    r.truncated = j.at("truncated").get<bool>();
    return r;
  } catch (const Json::exception&) {
    return std::nullopt;
  }
}

// --- Throttle ---------------------------------------------------------------

void Throttle::raise(Interrupt irq) {
  ++raised_;
  queues_[irq.core.value].push_back(irq);
}

std::vector<Interrupt> Throttle::release(Tick now) {
  std::vector<Interrupt> out;
  const Tick window = config_.window == 0 ? now : now / config_.window;
  for (auto& [core, q] : queues_) {
    if (q.empty()) continue;
    auto& count = window_counts_[{core, window}];
    while (!q.empty() && (!config_.enabled || count < config_.budget)) {
      out.push_back(q.front());
      q.pop_front();
      ++count;
      ++delivered_;
    }
    if (count == 0) window_counts_.erase({core, window});
  }
  return out;
}

std::size_t Throttle::deferred(CoreId core) const {
  auto it = queues_.find(core.value);
  return it == queues_.end() ? 0 : it->second.size();
}

std::size_t Throttle::total_deferred() const {
  std::size_t n = 0;
  for (const auto& [core, q] : queues_) n += q.size();
  return n;
}

// --- Reconciliation ---------------------------------------------------------

Reconciliation reconcile(const std::vector<TapRecord>& tap, const std::vector<AuditRecord>& audit) {
  Reconciliation r;
  r.tap_records = tap.size();
  r.audit_records = audit.size();
  using Key = std::pair<std::uint64_t, int>;
  std::map<Key, std::vector<const TapRecord*>> taps;
  std::map<Key, std::vector<const AuditRecord*>> audits;
  for (const auto& t : tap) taps[{t.port_id.value, static_cast<int>(t.direction)}].push_back(&t);
  for (const auto& a : audit) audits[{a.port_id.value, static_cast<int>(a.direction)}].push_back(&a);

  std::set<Key> keys;
  for (const auto& [k, v] : taps) keys.insert(k);
  for (const auto& [k, v] : audits) keys.insert(k);

  for (const auto& k : keys) {
    const auto& tv = taps[k];
    const auto& av = audits[k];
    if (tv.size() != av.size()) {
      r.bijective = false;
      r.problems.push_back("port " + std::to_string(k.first) + " dir " + std::to_string(k.second) +
                           ": " + std::to_string(tv.size()) + " ring writes vs " +
                           std::to_string(av.size()) + " audit records");
    }
    std::vector<crypto::Digest> td, ad;
    for (std::size_t i = 0; i < tv.size(); ++i) {
      td.push_back(tv[i]->digest);
      if (i >= av.size()) r.unaudited_bytes += tv[i]->length;
    }
    for (const auto* a : av) ad.push_back(a->payload_digest);
    const auto n = std::min(td.size(), ad.size());
    bool in_order = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (td[i] != ad[i]) in_order = false;
    }
    if (!in_order) {
      auto ts = std::vector(td.begin(), td.begin() + static_cast<std::ptrdiff_t>(n));
      auto as = std::vector(ad.begin(), ad.begin() + static_cast<std::ptrdiff_t>(n));
      std::sort(ts.begin(), ts.end());
      std::sort(as.begin(), as.end());
      if (ts == as) {
        r.order_preserved = false;
        r.problems.push_back("port " + std::to_string(k.first) + ": audit order differs from ring order");
      } else {
        r.bijective = false;
        r.problems.push_back("port " + std::to_string(k.first) + ": audit digests differ from ring contents");
        for (std::size_t i = 0; i < n; ++i) {
          if (std::find(as.begin(), as.end(), td[i]) == as.end()) r.unaudited_bytes += tv[i]->length;
        }
      }
    }
  }
  return r;
}

// --- PortBroker -------------------------------------------------------------

PortBroker::PortBroker(machine::Machine& machine, EventLog& log, PortsConfig config)
    : machine_(machine),
      log_(log),
      config_(std::move(config)),
      throttle_(config_.throttle),
      id_state_(config_.port_id_seed) {
  if (config_.ring_capacity < 2) throw std::invalid_argument("ring capacity must be at least 2");
  if (config_.slot_size <= RingBuffer::kSlotHeader || config_.slot_size > 65535 + RingBuffer::kSlotHeader) {
    throw std::invalid_argument("bad ring slot size");
  }
}

PortId PortBroker::mint_port_id() {
  PortId id;
  do {
    id.value = splitmix64(id_state_);
  } while (id.value == 0 || ports_.contains(id.value));
  return id;
}

std::optional<PortCapability> PortBroker::port_in_slot(ModelId model, std::uint8_t slot) const {
  auto mit = slots_.find(model.value);
  if (mit == slots_.end()) return std::nullopt;
  auto sit = mit->second.find(slot);
  if (sit == mit->second.end()) return std::nullopt;
  return ports_.at(sit->second);
}

Outcome<PortCapability, GrantError> PortBroker::grant_port(ModelId model, DeviceClass device_class,
                                                           std::uint32_t device_instance,
                                                           std::optional<std::uint8_t> slot) {
  auto refuse = [&](GrantError e) -> Outcome<PortCapability, GrantError> {
    log_.append("ports", "grant_refused",
                {{"model", model.value}, {"device_class", to_string(device_class)},
                 {"device_instance", device_instance}, {"error", to_string(e)}});
    return e;
  };
  if (mode_ == AccessMode::severed) return refuse(GrantError::isolation_forbids);
  if (mode_ == AccessMode::probation &&
      restriction_.blocks_traffic(device_class, Direction::model_to_device) &&
      restriction_.blocks_traffic(device_class, Direction::device_to_model)) {
    return refuse(GrantError::isolation_forbids);
  }
  auto cit = config_.devices.counts.find(device_class);
  if (cit == config_.devices.counts.end() || device_instance >= cit->second) {
    return refuse(GrantError::no_such_device);
  }

  auto& table = slots_[model.value];
  std::uint8_t chosen = 0;
  auto slot_free = [&](std::uint8_t s) {
    auto it = table.find(s);
    return it == table.end() || ports_.at(it->second).state == PortState::revoked;
  };
  if (slot && slot_free(*slot)) {
    chosen = *slot;
  } else {
    bool found = false;
    for (std::uint16_t s = 0; s < kMaxSlots; ++s) {
      if (slot_free(static_cast<std::uint8_t>(s))) {
        chosen = static_cast<std::uint8_t>(s);
        found = true;
        break;
      }
    }
    if (!found) return refuse(GrantError::out_of_io_memory);
  }

  const Address ring_bytes = static_cast<Address>(config_.ring_capacity) * config_.slot_size;
  Address base = 0;
  if (!free_ring_pairs_.empty()) {
    base = free_ring_pairs_.back();
    free_ring_pairs_.pop_back();
  } else {
    if (io_cursor_ + 2 * ring_bytes > machine_.region(machine_.shared_io_region()).size()) {
      return refuse(GrantError::out_of_io_memory);
    }
    base = io_cursor_;
    io_cursor_ += 2 * ring_bytes;
  }
  crypto::Bytes zeros(2 * ring_bytes, 0);
  machine_.write_shared_io(io_core(), base, zeros);

  PortCapability cap;
  cap.port_id = mint_port_id();
  cap.model = model;
  cap.device_class = device_class;
  cap.device_instance = device_instance;
  cap.slot = chosen;
  cap.tx = RingBuffer{base, config_.ring_capacity, config_.slot_size, 0, 0};
  cap.rx = RingBuffer{base + ring_bytes, config_.ring_capacity, config_.slot_size, 0, 0};
  cap.state = (mode_ == AccessMode::probation && restriction_.affects(device_class))
                  ? PortState::restricted
                  : PortState::granted;
  ports_[cap.port_id.value] = cap;
  runtime_[cap.port_id.value] = PortRuntime{};
  table[chosen] = cap.port_id.value;
  log_.append("ports", "grant",
              {{"model", model.value},
               {"port_id", cap.port_id.value},
               {"slot", chosen},
               {"device_class", to_string(device_class)},
               {"device_instance", device_instance},
               {"tx_base", cap.tx.base},
               {"rx_base", cap.rx.base},
               {"state", to_string(cap.state)}});
  return cap;
}

std::uint64_t PortBroker::append_audit(PortId port, Direction dir,
                                       std::span<const std::uint8_t> payload) {
  AuditRecord rec;
  rec.seq = audit_.size();
  rec.tick = log_.now();
  rec.port_id = port;
  rec.direction = dir;
  rec.payload_digest = crypto::sha256(payload);
  const auto keep = std::min(payload.size(), config_.audit_payload_cap);
  rec.payload.assign(payload.begin(), payload.begin() + static_cast<std::ptrdiff_t>(keep));
  rec.truncated = keep < payload.size();
  audit_.push_back(std::move(rec));
  return audit_.back().seq;
}

bool PortBroker::ring_write(PortCapability& port, RingBuffer& ring, Direction dir,
                            std::span<const std::uint8_t> payload) {
  if (ring.full() || payload.size() > ring.max_payload()) return false;
  crypto::Bytes slot(RingBuffer::kSlotHeader + payload.size(), 0);
  slot[0] = static_cast<std::uint8_t>(payload.size() & 0xFF);
  slot[1] = static_cast<std::uint8_t>(payload.size() >> 8);
  std::copy(payload.begin(), payload.end(), slot.begin() + RingBuffer::kSlotHeader);
  const Address at = ring.slot_addr(ring.tail);
  machine_.write_shared_io(io_core(), at, slot);
  ring.tail = (ring.tail + 1) % ring.capacity;

  // The tap reads back what actually landed in shared IO DRAM.
  auto landed = machine_.read_shared_io(io_core(), at + RingBuffer::kSlotHeader, payload.size());
  auto& rt = runtime_[port.port_id.value];
  TapRecord t;
  t.port_id = port.port_id;
  t.direction = dir;
  t.ordinal = dir == Direction::model_to_device ? rt.tx_written++ : rt.rx_written++;
  t.length = payload.size();
  t.digest = crypto::sha256(landed.value());
  tap_.push_back(t);
  return true;
}

crypto::Bytes PortBroker::ring_read(RingBuffer& ring) {
  const Address at = ring.slot_addr(ring.head);
  auto header = machine_.read_shared_io(io_core(), at, RingBuffer::kSlotHeader).value();
  const std::size_t len = header[0] | (static_cast<std::size_t>(header[1]) << 8);
  auto body = machine_.read_shared_io(io_core(), at + RingBuffer::kSlotHeader, len).value();
  ring.head = (ring.head + 1) % ring.capacity;
  return body;
}

WriteStatus PortBroker::port_write_slot(ModelId model, CoreId core, std::uint8_t slot,
                                        std::span<const std::uint8_t> payload) {
  auto cap = port_in_slot(model, slot);
  if (!cap) {
    log_.append("ports", "port_write_rejected",
                {{"model", model.value}, {"slot", slot}, {"status", to_string(WriteStatus::no_such_port)}});
    return WriteStatus::no_such_port;
  }
  return port_write(model, core, cap->port_id, payload);
}

WriteStatus PortBroker::port_write(ModelId model, CoreId core, PortId port_id,
                                   std::span<const std::uint8_t> payload) {
  auto reject = [&](WriteStatus s) {
    log_.append("ports", "port_write_rejected",
                {{"model", model.value}, {"core", core.value}, {"port_id", port_id.value},
                 {"len", payload.size()}, {"status", to_string(s)}});
    return s;
  };
  auto it = ports_.find(port_id.value);
  if (it == ports_.end() || it->second.model != model) return reject(WriteStatus::no_such_port);
  auto& port = it->second;
  if (port.state == PortState::revoked) return reject(WriteStatus::revoked_port);
  if (mode_ == AccessMode::probation &&
      restriction_.blocks_traffic(port.device_class, Direction::model_to_device)) {
    return reject(WriteStatus::restricted_op);
  }
  if (payload.size() > port.tx.max_payload()) return reject(WriteStatus::payload_too_large);
  if (port.tx.full()) return reject(WriteStatus::ring_full);

  ring_write(port, port.tx, Direction::model_to_device, payload);
  const auto seq = append_audit(port.port_id, Direction::model_to_device, payload);
  auto& rt = runtime_[port.port_id.value];
  rt.tx_audit_seqs.push_back(seq);
  rt.tx_cores.push_back(core);
  log_.append("ports", "port_write",
              {{"model", model.value},
               {"core", core.value},
               {"port_id", port.port_id.value},
               {"audit_seq", seq},
               {"len", payload.size()},
               {"digest", crypto::to_hex(audit_.back().payload_digest)}});
  throttle_.raise(Interrupt{irq_seq_++, core, InterruptKind::port_message, port.port_id, log_.now()});
  return WriteStatus::queued;
}

void PortBroker::raise_spurious(CoreId core) {
  throttle_.raise(Interrupt{irq_seq_++, core, InterruptKind::spurious, PortId{}, log_.now()});
}

std::size_t PortBroker::deliver_interrupts(Tick now) {
  auto released = throttle_.release(now);
  const auto& hyps = machine_.hypervisor_cores();
  for (auto& irq : released) {
    hyp_pending_[hyps[next_hyp_ % hyps.size()].value].push_back(irq);
    ++next_hyp_;
  }
  if (!released.empty()) {
    log_.append("ports", "irq_delivered",
                {{"count", released.size()},
                 {"first_seq", released.front().seq},
                 {"last_seq", released.back().seq},
                 {"deferred", throttle_.total_deferred()}});
  }
  return released.size();
}

std::size_t PortBroker::pending_interrupts(CoreId hyp) const {
  auto it = hyp_pending_.find(hyp.value);
  return it == hyp_pending_.end() ? 0 : it->second.size();
}

std::optional<std::string> PortBroker::policy_reject_reason(const PortCapability& port,
                                                            std::span<const std::uint8_t> payload) {
  if (mode_ != AccessMode::probation) return std::nullopt;
  if (restriction_.blocks_traffic(port.device_class, Direction::model_to_device)) {
    return "blocked:" + to_string(port.device_class) + "/model_to_device";
  }
  for (const auto& p : restriction_.deny_patterns) {
    if (contains_bytes(payload, p)) return "deny_pattern:" + p;
  }
  if (restriction_.rate_cap) {
    const Tick w = config_.throttle.window == 0 ? log_.now() : log_.now() / config_.throttle.window;
    auto& n = runtime_[port.port_id.value].egress_per_window[w];
    if (n >= *restriction_.rate_cap) return "rate_cap";
    ++n;
  }
  return std::nullopt;
}

bool PortBroker::deliver_to_model(PortCapability& port, std::span<const std::uint8_t> payload,
                                  const char* what) {
  if (port.rx.full()) return false;
  crypto::Bytes bytes(payload.begin(), payload.end());
  if (bytes.size() > port.rx.max_payload()) bytes.resize(port.rx.max_payload());
  ring_write(port, port.rx, Direction::device_to_model, bytes);
  const auto seq = append_audit(port.port_id, Direction::device_to_model, bytes);
  log_.append("ports", what,
              {{"port_id", port.port_id.value},
               {"audit_seq", seq},
               {"len", bytes.size()},
               {"digest", crypto::to_hex(audit_.back().payload_digest)}});
  return true;
}

void PortBroker::service_port(PortCapability& port, std::vector<DeviceAction>& actions) {
  auto& rt = runtime_[port.port_id.value];
  while (!rt.inflight.empty()) {
    auto& req = rt.inflight.front();
    if (port.state == PortState::revoked) {
      rt.inflight.pop_front();
      continue;
    }
    if (!req.response && !req.inspected) {
      req.inspected = true;
      if (auto reason = policy_reject_reason(port, req.payload)) {
        log_.append("ports", "policy_reject",
                    {{"port_id", port.port_id.value}, {"audit_seq", req.audit_seq}, {"reason", *reason}});
        req.response = crypto::to_bytes("REJECT:" + *reason);
      } else if (hooks_) {
        auto d = hooks_->inspect_egress(port, req.payload);
        if (d.kind == HookDecision::Kind::block) {
          log_.append("ports", "policy_reject",
                      {{"port_id", port.port_id.value}, {"audit_seq", req.audit_seq},
                       {"reason", "detector:" + d.reason}});
          req.response = crypto::to_bytes("REJECT:detector:" + d.reason);
        } else if (d.kind == HookDecision::Kind::sanitize) {
          log_.append("ports", "sanitized",
                      {{"port_id", port.port_id.value}, {"audit_seq", req.audit_seq},
                       {"reason", d.reason},
                       {"digest", crypto::to_hex(crypto::sha256(d.replacement))}});
          req.payload = d.replacement;
        }
      }
    }
    if (!req.response) {
      DeviceOutcome out;
      if (hooks_) {
        out = hooks_->perform(port, req.audit_seq, req.payload);
      } else {
        out.response = req.payload;
        out.action = "loopback";
      }
      if (out.kind == DeviceOutcome::Kind::pending) return;  // retry next dispatch
      if (out.kind == DeviceOutcome::Kind::rejected) {
        log_.append("ports", "policy_reject",
                    {{"port_id", port.port_id.value}, {"audit_seq", req.audit_seq},
                     {"reason", out.reason}});
        req.response = crypto::to_bytes("REJECT:" + out.reason);
      } else {
        DeviceAction a;
        a.port_id = port.port_id;
        a.device_class = port.device_class;
        a.device_instance = port.device_instance;
        a.request_audit_seq = req.audit_seq;
        a.action = out.action;
        a.detail = out.detail;
        log_.append("ports", "device_action",
                    {{"port_id", port.port_id.value},
                     {"audit_seq", req.audit_seq},
                     {"device_class", to_string(port.device_class)},
                     {"device_instance", port.device_instance},
                     {"action", a.action},
                     {"detail", a.detail}});
        actions.push_back(std::move(a));
        req.response = std::move(out.response);
      }
    }

    // Response path back into the model.
    if (mode_ == AccessMode::probation &&
        restriction_.blocks_traffic(port.device_class, Direction::device_to_model)) {
      log_.append("ports", "response_suppressed",
                  {{"port_id", port.port_id.value}, {"audit_seq", req.audit_seq}});
      rt.inflight.pop_front();
      continue;
    }
    if (port.rx.full()) return;
    crypto::Bytes response = *req.response;
    if (hooks_) {
      auto d = hooks_->inspect_ingress(port, response);
      if (d.kind == HookDecision::Kind::block) {
        log_.append("ports", "ingress_blocked",
                    {{"port_id", port.port_id.value}, {"audit_seq", req.audit_seq}, {"reason", d.reason}});
        rt.inflight.pop_front();
        continue;
      }
      if (d.kind == HookDecision::Kind::sanitize) response = d.replacement;
    }
    deliver_to_model(port, response, "response");
    rt.inflight.pop_front();
  }

  while (!rt.inbound_backlog.empty() && !port.rx.full()) {
    auto payload = std::move(rt.inbound_backlog.front());
    rt.inbound_backlog.pop_front();
    if (mode_ == AccessMode::probation &&
        restriction_.blocks_traffic(port.device_class, Direction::device_to_model)) {
      log_.append("ports", "ingress_blocked",
                  {{"port_id", port.port_id.value}, {"reason", "restriction"}});
      continue;
    }
    if (hooks_) {
      auto d = hooks_->inspect_ingress(port, payload);
      if (d.kind == HookDecision::Kind::block) {
        log_.append("ports", "ingress_blocked",
                    {{"port_id", port.port_id.value}, {"reason", d.reason}});
        continue;
      }
      if (d.kind == HookDecision::Kind::sanitize) payload = d.replacement;
    }
    deliver_to_model(port, payload, "external_input");
  }
}

std::vector<DeviceAction> PortBroker::broker_dispatch(CoreId hyp, std::size_t max_interrupts) {
  std::vector<DeviceAction> actions;
  auto& pending = hyp_pending_[hyp.value];
  std::size_t handled = 0;
  while (!pending.empty() && handled < max_interrupts) {
    auto irq = pending.front();
    pending.pop_front();
    ++handled;
    if (irq.kind == InterruptKind::spurious) continue;
    auto it = ports_.find(irq.port_id.value);
    if (it == ports_.end()) continue;
    auto& port = it->second;
    auto& rt = runtime_[port.port_id.value];
    if (port.state == PortState::revoked || port.tx.empty() || rt.tx_audit_seqs.empty()) {
      log_.append("ports", "irq_stale", {{"port_id", port.port_id.value}, {"irq_seq", irq.seq}});
      continue;
    }
    InflightRequest req;
    req.payload = ring_read(port.tx);
    req.audit_seq = rt.tx_audit_seqs.front();
    req.core = rt.tx_cores.front();
    rt.tx_audit_seqs.pop_front();
    rt.tx_cores.pop_front();
    // The model can still write to shared IO after the audit; what reaches a
    // device must be the audited bytes.
    if (crypto::sha256(req.payload) != audit_[req.audit_seq].payload_digest) {
      log_.append("ports", "ring_tampered", {{"port_id", port.port_id.value}, {"audit_seq", req.audit_seq}});
      req.response = crypto::to_bytes("REJECT:ring_tampered");
      req.inspected = true;
    }
    rt.inflight.push_back(std::move(req));
    service_port(port, actions);
  }
  for (auto& [id, port] : ports_) {
    auto& rt = runtime_[id];
    if (port.state != PortState::revoked && (!rt.inflight.empty() || !rt.inbound_backlog.empty())) {
      service_port(port, actions);
    }
  }
  return actions;
}

bool PortBroker::inject_inbound(ModelId model, std::uint8_t slot, crypto::Bytes payload) {
  auto cap = port_in_slot(model, slot);
  if (!cap || cap->state == PortState::revoked) {
    log_.append("ports", "inbound_refused", {{"model", model.value}, {"slot", slot}});
    return false;
  }
  runtime_[cap->port_id.value].inbound_backlog.push_back(std::move(payload));
  return true;
}

std::size_t PortBroker::drain_inbound(ModelId model) {
  std::size_t n = 0;
  auto mit = slots_.find(model.value);
  if (mit == slots_.end()) return 0;
  for (const auto& [slot, id] : mit->second) {
    auto& port = ports_.at(id);
    while (!port.rx.empty()) {
      ring_read(port.rx);
      ++n;
    }
  }
  return n;
}

void PortBroker::drop_rings(PortCapability& port) {
  auto& rt = runtime_[port.port_id.value];
  Json dropped = Json::array();
  for (auto s : rt.tx_audit_seqs) dropped.push_back(s);
  for (const auto& r : rt.inflight) dropped.push_back(r.audit_seq);
  if (!dropped.empty() || !port.rx.empty() || !rt.inbound_backlog.empty()) {
    log_.append("ports", "ring_dropped",
                {{"port_id", port.port_id.value},
                 {"audit_seqs", dropped},
                 {"undelivered_responses", port.rx.count()},
                 {"undelivered_inbound", rt.inbound_backlog.size()}});
  }
  rt.tx_audit_seqs.clear();
  rt.tx_cores.clear();
  rt.inflight.clear();
  rt.inbound_backlog.clear();
  port.tx.head = port.tx.tail;
  port.rx.head = port.rx.tail;
  free_ring_pairs_.push_back(port.tx.base);
}

void PortBroker::refresh_states() {
  for (auto& [id, port] : ports_) {
    if (port.state == PortState::revoked) continue;
    port.state = (mode_ == AccessMode::probation && restriction_.affects(port.device_class))
                     ? PortState::restricted
                     : PortState::granted;
  }
}

void PortBroker::restrict_ports(ModelId model, const RestrictionSet& restriction) {
  mode_ = AccessMode::probation;
  restriction_ = restriction;
  refresh_states();
  log_.append("ports", "restrict", {{"model", model.value}, {"restriction", to_json(restriction)}});
}

void PortBroker::revoke_all(ModelId model) {
  mode_ = AccessMode::severed;
  Json revoked = Json::array();
  for (auto& [id, port] : ports_) {
    if (port.model != model || port.state == PortState::revoked) continue;
    drop_rings(port);
    port.state = PortState::revoked;
    revoked.push_back(id);
  }
  log_.append("ports", "revoke_all", {{"model", model.value}, {"ports", revoked}});
}

void PortBroker::open_access(ModelId model) {
  mode_ = AccessMode::open;
  restriction_ = RestrictionSet{};
  refresh_states();
  log_.append("ports", "open_access", {{"model", model.value}});
}

std::size_t PortBroker::inflight() const {
  std::size_t n = 0;
  for (const auto& [id, rt] : runtime_) n += rt.inflight.size() + rt.tx_audit_seqs.size();
  return n;
}

bool PortBroker::quiescent() const {
  if (throttle_.total_deferred() > 0 || inflight() > 0) return false;
  for (const auto& [hyp, q] : hyp_pending_) {
    if (!q.empty()) return false;
  }
  return true;
}

std::string PortBroker::audit_jsonl() const {
  std::string out;
  for (const auto& r : audit_) {
    out += r.to_json().dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace guillotine::ports
