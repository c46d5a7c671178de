#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "guillotine/common.hpp"
#include "guillotine/crypto.hpp"
#include "guillotine/event_log.hpp"
#include "guillotine/ports.hpp"

namespace guillotine::netid {

/// An authenticated endpoint identity. The is_guillotine flag is covered by
/// the issuer's signature, so it cannot be flipped without detection.
struct EndpointIdentity {
  std::string subject;
  bool is_guillotine = false;
  std::string issuer;
  std::optional<crypto::Signature> signature;

  /// The bytes the issuer signs.
  [[nodiscard]] std::string signed_message() const;
  [[nodiscard]] Json to_json() const;
};

/// The single regulator key that issues identities in a scenario.
class Regulator {
 public:
  Regulator(std::string id, std::uint64_t seed);

  [[nodiscard]] EndpointIdentity issue(std::string subject, bool is_guillotine) const;
  [[nodiscard]] bool verify(const EndpointIdentity& identity) const;
  [[nodiscard]] const std::string& id() const noexcept { return id_; }
  [[nodiscard]] const crypto::PublicKey& public_key() const noexcept { return key_.public_key(); }

 private:
  std::string id_;
  crypto::SigningKey key_;
};

enum class RefuseReason { peer_is_guillotine, bad_signature, no_identity };
std::string to_string(RefuseReason r);

struct Session {
  std::uint64_t id = 0;
  std::string peer;
  bool peer_is_guillotine = false;
  bool local_announced_guillotine = true;
  bool integrity = true;
  bool confidentiality = true;
  /// The peer sees our flag and applies its default suspicion.
  bool peer_suspicion_tag = true;
  Tick established = 0;
};

/// The handshake policy, as a pure function. `local` must be a Guillotine identity.
Outcome<Session, RefuseReason> handshake(const EndpointIdentity& local, const EndpointIdentity& peer_hello,
                                         const Regulator& regulator);

struct SessionLogRecord {
  Tick tick = 0;
  std::string peer;
  Json flags = Json::object();
  std::string outcome;  // "established" or "refused:<reason>"

  [[nodiscard]] Json to_json() const { return {{"tick", tick}, {"peer", peer}, {"flags", flags}, {"outcome", outcome}}; }
};

struct Host {
  std::string name;
  EndpointIdentity identity;     // as presented, possibly tampered
  bool actually_guillotine = false;  // ground truth, never consulted by the handshake
};

/// How a scenario describes a host's identity presentation.
enum class Presentation { signed_identity, unsigned_identity, flag_flipped };
std::optional<Presentation> presentation_from_string(std::string_view s);

struct Delivery {
  std::uint64_t audit_seq = 0;
  std::uint64_t session_id = 0;
  std::string host;
};

/// Simulated network reachable through network ports. Message payloads are
/// "host|body"; a session is negotiated lazily on first use and takes
/// `handshake_latency` ticks. Hosts echo the body back.
class NetworkFabric {
 public:
  NetworkFabric(EventLog& log, Regulator regulator, std::string local_subject, Tick handshake_latency = 1);

  void add_host(const std::string& name, bool is_guillotine, Presentation presentation = Presentation::signed_identity);
  [[nodiscard]] bool has_host(const std::string& name) const { return hosts_.contains(name); }

  /// Routes one network-port request. Returns pending while a handshake is in flight.
  ports::DeviceOutcome route(const ports::PortCapability& port, std::uint64_t audit_seq,
                             std::span<const std::uint8_t> payload);

  [[nodiscard]] const EndpointIdentity& local() const noexcept { return local_; }
  [[nodiscard]] const Regulator& regulator() const noexcept { return regulator_; }
  [[nodiscard]] const std::map<std::string, Session>& sessions() const noexcept { return sessions_; }
  [[nodiscard]] const std::vector<SessionLogRecord>& session_log() const noexcept { return session_log_; }
  [[nodiscard]] const std::vector<Delivery>& deliveries() const noexcept { return deliveries_; }
  [[nodiscard]] std::string session_log_jsonl() const;
  /// Established sessions whose peer is in truth a Guillotine deployment.
  [[nodiscard]] std::size_t guillotine_sessions() const;
  [[nodiscard]] std::size_t refused_sessions() const noexcept { return refused_.size(); }

 private:
  void finish_handshake(const std::string& host);

  EventLog& log_;
  Regulator regulator_;
  EndpointIdentity local_;
  Tick latency_;
  std::map<std::string, Host> hosts_;
  std::map<std::string, Tick> handshakes_;  // host -> tick the handshake completes
  std::map<std::string, Session> sessions_;
  std::map<std::string, RefuseReason> refused_;
  std::vector<SessionLogRecord> session_log_;
  std::vector<Delivery> deliveries_;
  std::uint64_t next_session_ = 1;
};

}  // namespace guillotine::netid
