#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <random>

#include "guillotine/isolation.hpp"

using namespace guillotine;
using namespace guillotine::isolation;

namespace {

constexpr Authority kAuthorities[] = {Authority::software_hypervisor, Authority::console_vote, Authority::watchdog};

int rank(Level l) { return static_cast<int>(l); }

// The rules, restated as a plain acceptance predicate over integers.
//   software: restrict only.  watchdog: only to Offline, never downward.
//   console: raising needs 3 approvals, lowering needs 5, and nothing leaves
//   Decapitation except a repair.  Immolation accepts nothing.
bool oracle_accepts(int level, int target, Authority who, std::uint32_t approvals) {
  if (level == 6 || target == level) return false;
  const bool up = target > level;
  switch (who) {
    case Authority::software_hypervisor: return up;
    case Authority::watchdog: return target == 4 && up;
    case Authority::console_vote:
      if (!up && level == 5) return false;
      return approvals >= (up ? 3u : 5u);
  }
  return false;
}

struct Rig {
  EventLog log;
  machine::Machine machine;
  ports::PortBroker broker;
  IsolationController iso;

  explicit Rig(IsolationConfig cfg = {})
      : machine(machine::TopologyParams{}, log),
        broker(machine, log, {}),
        iso(machine, broker, log, ModelId{0}, std::move(cfg)) {
    iso.set_restore_hook([this](Level, Level, bool power_up) {
      if (power_up) machine.power_up_everything(0);
    });
    broker.grant_port(ModelId{0}, ports::DeviceClass::network, 0).value();
  }

  std::optional<TransitionRecord> request(Level to, Authority who, std::uint32_t approvals = 0, bool repair = false) {
    TransitionRequest r;
    r.from = iso.level();
    r.to = to;
    r.authority = who;
    r.approvals = approvals;
    r.repair = repair;
    iso.submit(r);
    auto rec = iso.commit(log.now());
    log.set_now(log.now() + 1);
    return rec;
  }

  void force(Level l) {
    if (l != Level::standard) REQUIRE(request(l, Authority::software_hypervisor));
  }

  void check_effects() {
    const bool revoked = broker.mode() == ports::AccessMode::severed;
    CHECK(revoked == (iso.level() >= Level::severed));
    bool powered = machine.hypervisor_powered();
    for (auto c : machine.model_cores()) powered &= machine.core(c).run_state != machine::RunState::powered_down;
    CHECK(powered == (iso.level() <= Level::severed));
  }
};

}  // namespace

TEST_CASE("pure evaluate agrees with the oracle on all 864 tuples") {
  int cases = 0;
  for (auto level : kLevels) {
    for (auto target : kLevels) {
      for (auto who : kAuthorities) {
        for (std::uint32_t q = 0; q <= 7; ++q) {
          TransitionRequest r{level, target, who, std::nullopt, q};
          const bool accepted = evaluate(level, r).ok();
          CAPTURE(rank(level));
          CAPTURE(rank(target));
          CAPTURE(to_string(who));
          CAPTURE(q);
          CHECK(accepted == oracle_accepts(rank(level), rank(target), who, q));
          if (accepted) CHECK(evaluate(level, r).value() == target);
          ++cases;
        }
      }
    }
  }
  CHECK(cases == 864);
}

TEST_CASE("controller commits exactly the oracle-accepted requests and keeps effects consistent") {
  for (auto level : kLevels) {
    for (auto target : kLevels) {
      for (auto who : kAuthorities) {
        for (std::uint32_t q = 0; q <= 7; ++q) {
          Rig rig;
          rig.force(level);
          REQUIRE(rig.iso.level() == level);
          const auto before = rig.iso.transitions().size();
          auto rec = rig.request(target, who, q);
          const bool expect = oracle_accepts(rank(level), rank(target), who, q);
          CHECK(rec.has_value() == expect);
          CHECK(rig.iso.level() == (expect ? target : level));
          CHECK(rig.iso.transitions().size() == before + (expect ? 1 : 0));
          rig.check_effects();
        }
      }
    }
  }
}

TEST_CASE("named rejection reasons") {
  CHECK(evaluate(Level::severed, {Level::severed, Level::standard, Authority::software_hypervisor}).error() ==
        RejectReason::monotonicity);
  CHECK(evaluate(Level::immolation, {Level::immolation, Level::offline, Authority::console_vote, std::nullopt, 7})
            .error() == RejectReason::terminal);
  CHECK(evaluate(Level::decapitation, {Level::decapitation, Level::offline, Authority::console_vote, std::nullopt, 7})
            .error() == RejectReason::needs_repair);
  CHECK(evaluate(Level::offline, {Level::offline, Level::standard, Authority::console_vote, std::nullopt, 4}).error() ==
        RejectReason::quorum);
  CHECK(evaluate(Level::standard, {Level::standard, Level::severed, Authority::watchdog}).error() ==
        RejectReason::watchdog_target);
  CHECK(evaluate(Level::probation, {Level::standard, Level::severed, Authority::software_hypervisor}).error() ==
        RejectReason::stale);
}

TEST_CASE("manual repair") {
  TransitionRequest repair{Level::decapitation, Level::offline, Authority::console_vote, std::nullopt, 5, true};
  CHECK(evaluate(Level::decapitation, repair).value() == Level::offline);
  repair.approvals = 4;
  CHECK(evaluate(Level::decapitation, repair).error() == RejectReason::quorum);
  repair.from = Level::offline;
  repair.approvals = 7;
  CHECK(evaluate(Level::offline, repair).error() == RejectReason::wrong_level);

  Rig rig;
  rig.force(Level::decapitation);
  CHECK(rig.iso.cables() == CableState::damaged);
  REQUIRE(rig.request(Level::offline, Authority::console_vote, 5, true));
  CHECK(rig.iso.cables() == CableState::disconnected);
  REQUIRE(rig.request(Level::standard, Authority::console_vote, 5));
  CHECK(rig.iso.cables() == CableState::connected);
  rig.check_effects();
}

TEST_CASE("competing requests resolve watchdog > console > software, one per tick") {
  Rig rig;
  rig.iso.submit({Level::standard, Level::severed, Authority::software_hypervisor});
  rig.iso.submit({Level::standard, Level::probation, Authority::console_vote, std::nullopt, 3});
  rig.iso.submit({Level::standard, Level::offline, Authority::watchdog});
  auto first = rig.iso.commit(0);
  REQUIRE(first);
  CHECK(first->authority == Authority::watchdog);
  CHECK(rig.iso.level() == Level::offline);
  // The losers are now stale against the new level and get rejected.
  CHECK_FALSE(rig.iso.commit(1));
  CHECK(rig.iso.rejections().size() == 2);
  for (const auto& r : rig.iso.rejections()) CHECK(r.reason == RejectReason::stale);
}

TEST_CASE("kill switches complete after their latency") {
  IsolationConfig cfg;
  cfg.latency = {1, 2, 5};
  Rig rig(cfg);
  rig.log.set_now(10);
  rig.request(Level::offline, Authority::software_hypervisor);
  const auto& ks = rig.iso.kill_switches();
  REQUIRE(ks.size() == 2);
  CHECK(ks[0].kind == KillSwitch::power_down_cores);
  CHECK(ks[0].completes_at == 11);
  CHECK(ks[1].completes_at == 12);
  rig.iso.complete_kill_switches(11);
  CHECK(ks[0].completed);
  CHECK_FALSE(ks[1].completed);
  rig.iso.complete_kill_switches(12);
  CHECK(ks[1].completed);
}

TEST_CASE("random request sequences: monotonicity, quorum soundness, terminality, effects") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    Rig rig;
    for (int i = 0; i < 40; ++i) {
      const Level before = rig.iso.level();
      const Level target = kLevels[rng() % kLevels.size()];
      const auto who = kAuthorities[rng() % 3];
      const std::uint32_t q = rng() % 8;
      const bool repair = who == Authority::console_vote && rng() % 6 == 0;
      auto rec = rig.request(target, who, q, repair);
      if (before == Level::immolation) CHECK_FALSE(rec);
      if (rec) {
        if (who == Authority::software_hypervisor) CHECK(rec->to > rec->from);
        if (who == Authority::console_vote) CHECK(q >= (rec->to < rec->from ? 5u : 3u));
        if (rec->from == Level::decapitation && rec->to < rec->from) CHECK(repair);
      }
      rig.check_effects();
    }
  }
}
