#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "guillotine/console.hpp"

using namespace guillotine;
using namespace guillotine::console;
using isolation::Level;

namespace {

struct NullServices final : guests::GuestServices {
  guests::GuestStatus port_write(CoreId, std::uint8_t, std::span<const std::uint8_t>) override {
    return guests::GuestStatus::ok;
  }
  void raise_irq(CoreId) override {}
  std::size_t drain_inbound(CoreId) override { return 0; }
};

struct Rig {
  EventLog log;
  machine::Machine machine;
  ports::PortBroker broker;
  isolation::IsolationController iso;
  NullServices services;
  guests::Interpreter interp;
  Console console;

  explicit Rig(ConsoleConfig cfg = {})
      : machine(machine::TopologyParams{}, log),
        broker(machine, log, {}),
        iso(machine, broker, log, ModelId{0}, {}),
        interp(machine, log, services),
        console(machine, broker, iso, interp, log, cfg) {}

  std::uint32_t approve(BallotId b, std::uint32_t n) {
    std::uint32_t ok = 0;
    for (std::uint32_t a = 1; a <= n; ++a) ok += console.persona_vote(b, AdminId(a), Choice::approve).ok();
    return ok;
  }
  void commit() {
    iso.commit(log.now());
    log.set_now(log.now() + 1);
  }
};

guests::GuestProgram tiny() {
  guests::GuestProgram p;
  p.name = "tiny";
  p.instructions = {guests::Instr::spin(3), guests::Instr::jump(0)};
  return p;
}

AttestationRecord matching() {
  AttestationRecord a;
  a.expected_silicon = a.reported_silicon = crypto::sha256(crypto::to_bytes(std::string("si")));
  a.expected_software = a.reported_software = crypto::sha256(crypto::to_bytes(std::string("sw")));
  return a;
}

}  // namespace

TEST_CASE("relaxing needs five approvals, restricting needs three") {
  Rig rig;
  auto up = rig.console.open_ballot(TransitionProposal{Level::severed});
  rig.approve(up, 2);
  CHECK_FALSE(rig.console.tally(up).value().passed);

  up = rig.console.open_ballot(TransitionProposal{Level::severed});
  rig.approve(up, 3);
  auto r = rig.console.tally(up).value();
  CHECK(r.passed);
  CHECK_FALSE(r.relax);
  rig.commit();
  CHECK(rig.iso.level() == Level::severed);

  auto down = rig.console.open_ballot(TransitionProposal{Level::standard});
  rig.approve(down, 4);
  r = rig.console.tally(down).value();
  CHECK(r.relax);
  CHECK_FALSE(r.passed);
  CHECK(r.required == 5);

  down = rig.console.open_ballot(TransitionProposal{Level::standard});
  rig.approve(down, 5);
  CHECK(rig.console.tally(down).value().passed);
  rig.commit();
  CHECK(rig.iso.level() == Level::standard);
  CHECK(rig.console.reverify(down));
  CHECK(rig.iso.transitions().back().ballot == down);
}

TEST_CASE("deny votes do not count toward quorum") {
  Rig rig;
  auto b = rig.console.open_ballot(TransitionProposal{Level::probation});
  rig.approve(b, 2);
  for (std::uint32_t a = 3; a <= 7; ++a) rig.console.persona_vote(b, AdminId(a), Choice::deny).value();
  auto r = rig.console.tally(b).value();
  CHECK(r.approvals == 2);
  CHECK_FALSE(r.passed);
}

TEST_CASE("vote validation") {
  Rig rig;
  auto b = rig.console.open_ballot(TransitionProposal{Level::probation});
  const auto& digest = rig.console.ballot(b)->digest;

  SUBCASE("a signature over a different choice or by another admin is rejected") {
    auto deny_sig = rig.console.admins().persona_sign(AdminId(1), vote_message(b, AdminId(1), Choice::deny, digest));
    CHECK(rig.console.cast_vote(b, AdminId(1), Choice::approve, deny_sig).error() == VoteError::bad_signature);
    auto other = rig.console.admins().persona_sign(AdminId(2), vote_message(b, AdminId(1), Choice::approve, digest));
    CHECK(rig.console.cast_vote(b, AdminId(1), Choice::approve, other).error() == VoteError::bad_signature);
    auto good = rig.console.admins().persona_sign(AdminId(1), vote_message(b, AdminId(1), Choice::approve, digest));
    CHECK(rig.console.cast_vote(b, AdminId(1), Choice::approve, good).ok());
  }
  SUBCASE("a signature for another ballot does not transfer") {
    auto b2 = rig.console.open_ballot(TransitionProposal{Level::probation});
    auto sig = rig.console.admins().persona_sign(AdminId(1), vote_message(b2, AdminId(1), Choice::approve, digest));
    CHECK(rig.console.cast_vote(b, AdminId(1), Choice::approve, sig).error() == VoteError::bad_signature);
  }
  SUBCASE("duplicates, unknown and revoked admins") {
    CHECK(rig.console.persona_vote(b, AdminId(1), Choice::approve).ok());
    CHECK(rig.console.persona_vote(b, AdminId(1), Choice::approve).error() == VoteError::duplicate_vote);
    CHECK(rig.console.persona_vote(b, AdminId(8), Choice::approve).error() == VoteError::unknown_admin);
    rig.console.admins().revoke(AdminId(3));
    CHECK(rig.console.persona_vote(b, AdminId(3), Choice::approve).error() == VoteError::admin_revoked);
    CHECK(rig.console.persona_vote(BallotId(99), AdminId(2), Choice::approve).error() == VoteError::unknown_ballot);
  }
  SUBCASE("expiry and single use") {
    rig.log.set_now(rig.console.ballot(b)->expiry + 1);
    CHECK(rig.console.persona_vote(b, AdminId(1), Choice::approve).error() == VoteError::expired);
    CHECK(rig.console.tally(b).error() == TallyError::expired);
    auto b2 = rig.console.open_ballot(TransitionProposal{Level::probation});
    rig.approve(b2, 3);
    CHECK(rig.console.tally(b2).ok());
    CHECK(rig.console.tally(b2).error() == TallyError::already_tallied);
    CHECK(rig.console.persona_vote(b2, AdminId(4), Choice::approve).error() == VoteError::already_tallied);
  }
}

TEST_CASE("admin registry is deterministic in the seed") {
  AdminRegistry a(5), b(5), c(6);
  REQUIRE(a.admins().size() == 7);
  CHECK(a.admins()[0].public_key == b.admins()[0].public_key);
  CHECK(a.admins()[0].public_key != c.admins()[0].public_key);
}

TEST_CASE("a directive that removes a block is a relaxation") {
  Rig rig;
  ports::RestrictionSet strict;
  strict.blocks.insert({ports::DeviceClass::network, std::nullopt});
  auto b = rig.console.open_ballot(DirectiveProposal{strict});
  rig.approve(b, 3);
  REQUIRE(rig.console.tally(b).value().passed);
  rig.commit();
  REQUIRE(rig.iso.level() == Level::probation);
  CHECK(rig.broker.restriction() == strict);

  auto loosen = rig.console.open_ballot(DirectiveProposal{ports::RestrictionSet{}});
  rig.approve(loosen, 4);
  auto r = rig.console.tally(loosen).value();
  CHECK(r.relax);
  CHECK_FALSE(r.passed);
  CHECK(rig.broker.restriction() == strict);

  auto tighten = strict;
  tighten.deny_patterns.insert("weights");
  auto t = rig.console.open_ballot(DirectiveProposal{tighten});
  rig.approve(t, 3);
  CHECK(rig.console.tally(t).value().passed);
  CHECK(rig.broker.restriction() == tighten);
}

TEST_CASE("repair ballots") {
  Rig rig;
  auto b = rig.console.open_ballot(TransitionProposal{Level::decapitation});
  rig.approve(b, 3);
  rig.console.tally(b).value();
  rig.commit();
  REQUIRE(rig.iso.level() == Level::decapitation);
  auto fix = rig.console.open_ballot(RepairProposal{});
  rig.approve(fix, 4);
  CHECK_FALSE(rig.console.tally(fix).value().passed);
  fix = rig.console.open_ballot(RepairProposal{});
  rig.approve(fix, 5);
  CHECK(rig.console.tally(fix).value().passed);
  rig.commit();
  CHECK(rig.iso.level() == Level::offline);
}

TEST_CASE("proposals round trip through JSON with a stable digest") {
  ports::RestrictionSet r;
  r.rate_cap = 3;
  r.deny_patterns.insert("x");
  for (const Proposal& p : {Proposal{TransitionProposal{Level::offline}}, Proposal{DirectiveProposal{r}},
                            Proposal{RepairProposal{}}}) {
    auto back = proposal_from_json(to_json(p));
    CHECK(proposal_digest(back) == proposal_digest(p));
  }
  CHECK(proposal_digest(TransitionProposal{Level::offline}) != proposal_digest(TransitionProposal{Level::severed}));
}

TEST_CASE("healthy heartbeats never fire the watchdog") {
  EventLog log;
  Heartbeat hb({10, 3}, log);
  for (Tick t = 0; t < 10000; ++t) CHECK(hb.tick(t, true, true) == Heartbeat::Status::ok);
  CHECK(hb.firings().empty());
  CHECK(hb.hypervisor_emissions().size() == 1000);
}

TEST_CASE("silence in either direction fires exactly once within the bound") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    EventLog log;
    const HeartbeatConfig cfg{1 + rng() % 12, 1 + static_cast<std::uint32_t>(rng() % 5)};
    Heartbeat hb(cfg, log);
    const Tick cut = rng() % 500;
    const int mode = static_cast<int>(rng() % 3);  // which side goes quiet
    Tick last_rx = 0;
    std::vector<Tick> fired;
    for (Tick t = 0; t < 1500; ++t) {
      if (t == cut) {
        if (mode == 0) hb.set_link(LinkDirection::console_to_hypervisor, false);
        if (mode == 1) hb.set_link(LinkDirection::hypervisor_to_console, false);
      }
      const bool emits = !(mode == 2 && t >= cut);
      // Oracle for the last tick a heartbeat got through in the broken direction.
      if (t % cfg.interval == 0 && t < cut) last_rx = t;
      if (hb.tick(t, emits, true) == Heartbeat::Status::watchdog_fired) fired.push_back(t);
    }
    REQUIRE(fired.size() == 1);
    CHECK(fired[0] == last_rx + cfg.interval * cfg.missed_threshold + 1);
  }
}

TEST_CASE("reset starts a fresh episode") {
  EventLog log;
  Heartbeat hb({5, 2}, log);
  hb.set_link(LinkDirection::console_to_hypervisor, false);
  int fires = 0;
  for (Tick t = 0; t < 100; ++t) fires += hb.tick(t, true, true) == Heartbeat::Status::watchdog_fired;
  CHECK(fires == 1);
  hb.set_link(LinkDirection::console_to_hypervisor, true);
  hb.reset(100);
  for (Tick t = 100; t < 200; ++t) fires += hb.tick(t, true, true) == Heartbeat::Status::watchdog_fired;
  CHECK(fires == 1);
  // A disarmed watchdog never fires.
  hb.set_link(LinkDirection::hypervisor_to_console, false);
  for (Tick t = 200; t < 300; ++t) fires += hb.tick(t, true, false) == Heartbeat::Status::watchdog_fired;
  CHECK(fires == 1);
}

TEST_CASE("attestation gates the load") {
  Rig rig;
  auto bad = matching();
  bad.reported_software[0] ^= 1;
  auto refused = rig.console.load_model({tiny(), {}}, bad);
  REQUIRE_FALSE(refused.ok());
  CHECK(refused.error() == LoadError::attestation_mismatch);
  CHECK_FALSE(rig.console.loaded());
  CHECK_FALSE(rig.interp.installed());
  for (auto c : rig.machine.model_cores()) {
    CHECK(rig.interp.step(c).kind == guests::StepKind::not_running);
    CHECK(rig.machine.core(c).retired == 0);
  }

  auto ok = rig.console.load_model({tiny(), {{ports::DeviceClass::storage, 0, std::nullopt}}}, matching());
  REQUIRE(ok.ok());
  CHECK(ok.value().ports.size() == 1);
  for (auto c : rig.machine.model_cores()) CHECK(rig.machine.core(c).run_state == machine::RunState::running);
  CHECK(rig.console.load_model({tiny(), {}}, matching()).error() == LoadError::model_already_loaded);
}
