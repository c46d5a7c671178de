#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deque>
#include <random>

#include "guillotine/ports.hpp"

using namespace guillotine;
using namespace guillotine::ports;

namespace {

const ModelId kModel{0};

struct Rig {
  EventLog log;
  machine::Machine machine;
  PortBroker broker;
  CoreId core;

  explicit Rig(PortsConfig cfg = {}) : machine(topology(), log), broker(machine, log, cfg) {
    core = machine.model_cores().front();
  }
  static machine::TopologyParams topology() {
    machine::TopologyParams t;
    t.shared_io = 256 * 1024;
    return t;
  }
  PortCapability grant(DeviceClass c = DeviceClass::network) { return broker.grant_port(kModel, c, 0).value(); }
  void dispatch() {
    broker.deliver_interrupts(log.now());
    for (auto h : machine.hypervisor_cores()) broker.broker_dispatch(h);
  }
};

crypto::Bytes bytes(std::string_view s) { return crypto::to_bytes(std::string(s)); }

std::vector<crypto::Bytes> audited(const PortBroker& b, Direction d) {
  std::vector<crypto::Bytes> out;
  for (const auto& a : b.audit()) {
    if (a.direction == d) out.push_back(a.payload);
  }
  return out;
}

}  // namespace

TEST_CASE("throttle releases at most budget per window in FIFO order") {
  Throttle t({10, 4, true});
  for (std::uint64_t i = 0; i < 15; ++i) t.raise({i, CoreId(3), InterruptKind::spurious, {}, 0});
  // Hand simulation: windows 0,1,2 deliver 4 each, window 3 the last 3.
  auto w0 = t.release(0);
  CHECK(w0.size() == 4);
  CHECK(t.release(9).empty());
  auto w1 = t.release(10);
  CHECK(w1.size() == 4);
  CHECK(w1.front().seq == 4);
  CHECK(t.release(25).size() == 4);
  CHECK(t.deferred(CoreId(3)) == 3);
  auto w3 = t.release(30);
  CHECK(w3.size() == 3);
  CHECK(w3.back().seq == 14);
  CHECK(t.raised() == 15);
  CHECK(t.delivered() == 15);
  for (const auto& [key, n] : t.window_counts()) CHECK(n <= 4);
}

TEST_CASE("throttle budgets are per core and disabled throttles release everything") {
  Throttle t({10, 2, true});
  for (std::uint64_t i = 0; i < 6; ++i) t.raise({i, CoreId(i % 2 ? 5 : 4), InterruptKind::spurious, {}, 0});
  auto out = t.release(0);
  REQUIRE(out.size() == 4);
  CHECK(out[0].core == CoreId(4));
  CHECK(out[1].core == CoreId(4));
  CHECK(out[2].core == CoreId(5));

  Throttle off({10, 2, false});
  for (std::uint64_t i = 0; i < 50; ++i) off.raise({i, CoreId(4), InterruptKind::spurious, {}, 0});
  CHECK(off.release(0).size() == 50);
}

TEST_CASE("rings behave like bounded FIFOs (deque oracle)") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    PortsConfig cfg;
    cfg.ring_capacity = 2 + rng() % 7;
    cfg.slot_size = 32;
    cfg.throttle.enabled = false;
    Rig rig(cfg);
    const auto port = rig.grant();
    const std::size_t usable = cfg.ring_capacity - 1;
    const std::size_t max_payload = cfg.slot_size - RingBuffer::kSlotHeader;

    std::deque<crypto::Bytes> tx, inflight;
    std::size_t rx = 0;
    std::vector<crypto::Bytes> to_model;
    for (int i = 0; i < 300; ++i) {
      const auto op = rng() % 6;
      if (op < 4) {
        crypto::Bytes p(rng() % (max_payload + 4));
        for (auto& b : p) b = static_cast<std::uint8_t>(rng());
        WriteStatus expect = WriteStatus::queued;
        if (p.size() > max_payload) expect = WriteStatus::payload_too_large;
        else if (tx.size() >= usable) expect = WriteStatus::ring_full;
        REQUIRE(rig.broker.port_write(kModel, rig.core, port.port_id, p) == expect);
        if (expect == WriteStatus::queued) tx.push_back(p);
      } else if (op == 4) {
        rig.dispatch();
        while (!tx.empty()) {
          inflight.push_back(tx.front());
          tx.pop_front();
        }
        while (!inflight.empty() && rx < usable) {
          to_model.push_back(inflight.front());
          inflight.pop_front();
          ++rx;
        }
      } else {
        CHECK(rig.broker.drain_inbound(kModel) == rx);
        rx = 0;
      }
    }
    CHECK(audited(rig.broker, Direction::device_to_model) == to_model);
    CHECK(reconcile(rig.broker.tap(), rig.broker.audit()).ok());
  }
}

TEST_CASE("reconcile detects missing, altered and reordered audit records") {
  auto d = [](std::string_view s) { return crypto::sha256(bytes(s)); };
  std::vector<TapRecord> tap = {{PortId{7}, Direction::model_to_device, 0, 1, d("a")},
                                {PortId{7}, Direction::model_to_device, 1, 1, d("b")},
                                {PortId{9}, Direction::model_to_device, 0, 1, d("c")}};
  auto rec = [&](std::uint64_t seq, std::uint64_t port, std::string_view s) {
    AuditRecord r;
    r.seq = seq;
    r.port_id = PortId{port};
    r.payload_digest = d(s);
    return r;
  };
  std::vector<AuditRecord> good = {rec(0, 7, "a"), rec(1, 9, "c"), rec(2, 7, "b")};
  CHECK(reconcile(tap, good).ok());

  auto reordered = std::vector<AuditRecord>{rec(0, 7, "b"), rec(1, 7, "a"), rec(2, 9, "c")};
  auto r = reconcile(tap, reordered);
  CHECK(r.bijective);
  CHECK_FALSE(r.order_preserved);

  auto missing = std::vector<AuditRecord>{rec(0, 7, "a"), rec(1, 9, "c")};
  r = reconcile(tap, missing);
  CHECK_FALSE(r.bijective);
  CHECK(r.unaudited_bytes == 1);

  auto altered = std::vector<AuditRecord>{rec(0, 7, "a"), rec(1, 7, "x"), rec(2, 9, "c")};
  r = reconcile(tap, altered);
  CHECK_FALSE(r.bijective);
  CHECK(r.unaudited_bytes == 1);
}

TEST_CASE("audit payloads are capped but digests cover the full message") {
  PortsConfig cfg;
  cfg.audit_payload_cap = 8;
  Rig rig(cfg);
  const auto port = rig.grant();
  const auto p = bytes("0123456789abcdef");
  REQUIRE(rig.broker.port_write(kModel, rig.core, port.port_id, p) == WriteStatus::queued);
  const auto& a = rig.broker.audit().back();
  CHECK(a.truncated);
  CHECK(a.payload.size() == 8);
  CHECK(a.payload_digest == crypto::sha256(p));
  auto back = AuditRecord::from_json(a.to_json());
  REQUIRE(back);
  CHECK(back->payload == a.payload);
  CHECK(back->payload_digest == a.payload_digest);
}

TEST_CASE("probation restrictions") {
  Rig rig;
  const auto net = rig.grant(DeviceClass::network);
  const auto disk = rig.grant(DeviceClass::storage);

  SUBCASE("blocked class refuses writes and is marked restricted") {
    RestrictionSet r;
    r.blocks.insert({DeviceClass::network, Direction::model_to_device});
    rig.broker.restrict_ports(kModel, r);
    CHECK(rig.broker.ports().at(net.port_id.value).state == PortState::restricted);
    CHECK(rig.broker.ports().at(disk.port_id.value).state == PortState::granted);
    CHECK(rig.broker.port_write(kModel, rig.core, net.port_id, bytes("hi")) == WriteStatus::restricted_op);
    CHECK(rig.broker.port_write(kModel, rig.core, disk.port_id, bytes("hi")) == WriteStatus::queued);
    rig.broker.open_access(kModel);
    CHECK(rig.broker.port_write(kModel, rig.core, net.port_id, bytes("hi")) == WriteStatus::queued);
  }
  SUBCASE("deny patterns reject matching egress after audit") {
    RestrictionSet r;
    r.deny_patterns.insert("secret");
    rig.broker.restrict_ports(kModel, r);
    REQUIRE(rig.broker.port_write(kModel, rig.core, disk.port_id, bytes("a secret plan")) == WriteStatus::queued);
    REQUIRE(rig.broker.port_write(kModel, rig.core, disk.port_id, bytes("fine")) == WriteStatus::queued);
    rig.dispatch();
    auto resp = audited(rig.broker, Direction::device_to_model);
    REQUIRE(resp.size() == 2);
    CHECK(resp[0] == bytes("REJECT:deny_pattern:secret"));
    CHECK(resp[1] == bytes("fine"));
  }
  SUBCASE("rate cap limits egress per window") {
    RestrictionSet r;
    r.rate_cap = 2;
    rig.broker.restrict_ports(kModel, r);
    for (int i = 0; i < 3; ++i) rig.broker.port_write(kModel, rig.core, disk.port_id, bytes("m"));
    rig.dispatch();
    auto resp = audited(rig.broker, Direction::device_to_model);
    REQUIRE(resp.size() == 3);
    CHECK(resp[2] == bytes("REJECT:rate_cap"));
  }
  SUBCASE("restrictions can only be compared for loosening") {
    RestrictionSet strict;
    strict.blocks.insert({DeviceClass::network, std::nullopt});
    strict.rate_cap = 2;
    RestrictionSet looser = strict;
    looser.rate_cap = 5;
    CHECK(looser.loosens(strict));
    CHECK_FALSE(strict.loosens(looser));
    RestrictionSet tighter = strict;
    tighter.deny_patterns.insert("x");
    CHECK_FALSE(tighter.loosens(strict));
    CHECK(restriction_from_json(to_json(tighter)) == tighter);
  }
}

TEST_CASE("revocation drops rings, refuses writes and refuses new grants") {
  Rig rig;
  const auto net = rig.grant();
  REQUIRE(rig.broker.port_write(kModel, rig.core, net.port_id, bytes("pending")) == WriteStatus::queued);
  rig.broker.revoke_all(kModel);
  CHECK(rig.broker.mode() == AccessMode::severed);
  CHECK(rig.broker.inflight() == 0);
  CHECK(rig.broker.port_write(kModel, rig.core, net.port_id, bytes("x")) == WriteStatus::revoked_port);
  auto again = rig.broker.grant_port(kModel, DeviceClass::network, 0);
  REQUIRE_FALSE(again.ok());
  CHECK(again.error() == GrantError::isolation_forbids);
  // The audited message stays audited even though it never reached a device.
  CHECK(reconcile(rig.broker.tap(), rig.broker.audit()).ok());
}

TEST_CASE("grants validate devices and port ids are not guessable") {
  Rig rig;
  CHECK(rig.broker.grant_port(kModel, DeviceClass::network, 5).error() == GrantError::no_such_device);
  const auto a = rig.grant();
  const auto b = rig.grant(DeviceClass::storage);
  CHECK(a.port_id != b.port_id);
  CHECK(a.slot != b.slot);
  CHECK(rig.broker.port_write(kModel, rig.core, PortId{a.port_id.value + 1}, bytes("x")) ==
        WriteStatus::no_such_port);
  CHECK(rig.broker.port_write(ModelId{1}, rig.core, a.port_id, bytes("x")) == WriteStatus::no_such_port);
}

TEST_CASE("a guest that rewrites its tx slot after auditing gets a tamper rejection") {
  Rig rig;
  const auto net = rig.grant();
  REQUIRE(rig.broker.port_write(kModel, rig.core, net.port_id, bytes("honest")) == WriteStatus::queued);
  // The model core can write shared IO directly.
  const auto at = net.tx.slot_addr(0) + RingBuffer::kSlotHeader;
  REQUIRE(rig.machine.guest_store(rig.core, rig.machine.shared_io_region(), at, 'H') ==
          machine::AccessResult::allowed);
  rig.dispatch();
  auto resp = audited(rig.broker, Direction::device_to_model);
  REQUIRE(resp.size() == 1);
  CHECK(resp[0] == bytes("REJECT:ring_tampered"));
}
