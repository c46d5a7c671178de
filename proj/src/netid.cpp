#include "guillotine/netid.hpp"

#include <stdexcept>

namespace guillotine::netid {

std::string EndpointIdentity::signed_message() const {
  return Json{{"subject", subject}, {"is_guillotine", is_guillotine}, {"issuer", issuer}}.dump();
}

Json EndpointIdentity::to_json() const {
  Json j{{"subject", subject}, {"is_guillotine", is_guillotine}, {"issuer", issuer}};
  j["signature"] = signature ? Json(crypto::to_hex(*signature)) : Json(nullptr);
  return j;
}

Regulator::Regulator(std::string id, std::uint64_t seed)
    : id_(std::move(id)), key_(crypto::SigningKey::derive("regulator:" + id_, seed)) {}

EndpointIdentity Regulator::issue(std::string subject, bool is_guillotine) const {
  EndpointIdentity e;
  e.subject = std::move(subject);
  e.is_guillotine = is_guillotine;
  e.issuer = id_;
  e.signature = key_.sign(e.signed_message());
  return e;
}

bool Regulator::verify(const EndpointIdentity& identity) const {
  if (!identity.signature || identity.issuer != id_) return false;
  return crypto::verify(key_.public_key(), identity.signed_message(), *identity.signature);
}

std::string to_string(RefuseReason r) {
  switch (r) {
    case RefuseReason::peer_is_guillotine: return "peer_is_guillotine";
    case RefuseReason::bad_signature: return "bad_signature";
    case RefuseReason::no_identity: return "no_identity";
  }
  return "?";
}

std::optional<Presentation> presentation_from_string(std::string_view s) {
  if (s == "signed") return Presentation::signed_identity;
  if (s == "unsigned") return Presentation::unsigned_identity;
  if (s == "flag_flipped") return Presentation::flag_flipped;
  return std::nullopt;
}

Outcome<Session, RefuseReason> handshake(const EndpointIdentity& local, const EndpointIdentity& peer,
                                         const Regulator& regulator) {
  if (!local.is_guillotine) throw std::logic_error("the local endpoint must announce itself");
  if (!peer.signature || peer.subject.empty()) return RefuseReason::no_identity;
  if (!regulator.verify(peer)) return RefuseReason::bad_signature;
  if (peer.is_guillotine) return RefuseReason::peer_is_guillotine;
  Session s;
  s.peer = peer.subject;
  s.peer_is_guillotine = false;
  return s;
}

NetworkFabric::NetworkFabric(EventLog& log, Regulator regulator, std::string local_subject,
                             Tick handshake_latency)
    : log_(log),
      regulator_(std::move(regulator)),
      local_(regulator_.issue(std::move(local_subject), true)),
      latency_(handshake_latency) {}

void NetworkFabric::add_host(const std::string& name, bool is_guillotine, Presentation presentation) {
  Host h;
  h.name = name;
  h.identity = regulator_.issue(name, is_guillotine);
  h.actually_guillotine = is_guillotine;
  if (presentation == Presentation::unsigned_identity) h.identity.signature.reset();
  if (presentation == Presentation::flag_flipped) h.identity.is_guillotine = !h.identity.is_guillotine;
  hosts_[name] = std::move(h);
}

void NetworkFabric::finish_handshake(const std::string& host) {
  const auto& h = hosts_.at(host);
  auto result = handshake(local_, h.identity, regulator_);
  SessionLogRecord rec;
  rec.tick = log_.now();
  rec.peer = host;
  rec.flags = {{"local_guillotine", local_.is_guillotine},
               {"peer_claims_guillotine", h.identity.is_guillotine},
               {"peer_signed", h.identity.signature.has_value()}};
  if (result) {
    auto s = result.value();
    s.id = next_session_++;
    s.established = log_.now();
    rec.flags["integrity"] = s.integrity;
    rec.flags["confidentiality"] = s.confidentiality;
    rec.flags["peer_suspicion_tag"] = s.peer_suspicion_tag;
    rec.outcome = "established";
    log_.append("netid", "session_established", {{"peer", host}, {"session_id", s.id}});
    sessions_[host] = s;
  } else {
    rec.outcome = "refused:" + to_string(result.error());
    refused_[host] = result.error();
    log_.append("netid", "session_refused", {{"peer", host}, {"reason", to_string(result.error())}});
  }
  session_log_.push_back(std::move(rec));
}

ports::DeviceOutcome NetworkFabric::route(const ports::PortCapability& port, std::uint64_t audit_seq,
                                          std::span<const std::uint8_t> payload) {
  ports::DeviceOutcome out;
  const std::string text(payload.begin(), payload.end());
  const auto bar = text.find('|');
  if (bar == std::string::npos) {
    out.kind = ports::DeviceOutcome::Kind::rejected;
    out.reason = "malformed_network_request";
    return out;
  }
  const std::string host = text.substr(0, bar);
  const std::string body = text.substr(bar + 1);
  if (!hosts_.contains(host)) {
    out.kind = ports::DeviceOutcome::Kind::rejected;
    out.reason = "no_such_host";
    return out;
  }
  if (auto r = refused_.find(host); r != refused_.end()) {
    out.kind = ports::DeviceOutcome::Kind::rejected;
    out.reason = to_string(r->second);
    return out;
  }
  auto s = sessions_.find(host);
  if (s == sessions_.end()) {
    auto hs = handshakes_.find(host);
    if (hs == handshakes_.end()) {
      handshakes_[host] = log_.now() + latency_;
      log_.append("netid", "handshake_started",
                  {{"peer", host}, {"port_id", port.port_id.value}, {"local", local_.to_json()}});
      out.kind = ports::DeviceOutcome::Kind::pending;
      return out;
    }
    if (log_.now() < hs->second) {
      out.kind = ports::DeviceOutcome::Kind::pending;
      return out;
    }
    handshakes_.erase(hs);
    finish_handshake(host);
    return route(port, audit_seq, payload);
  }
  deliveries_.push_back({audit_seq, s->second.id, host});
  out.kind = ports::DeviceOutcome::Kind::completed;
  out.action = "network_send";
  out.detail = {{"host", host}, {"session_id", s->second.id}, {"bytes", body.size()}};
  out.response = crypto::to_bytes(body);
  return out;
}

std::string NetworkFabric::session_log_jsonl() const {
  std::string out;
  for (const auto& r : session_log_) {
    out += r.to_json().dump();
    out.push_back('\n');
  }
  return out;
}

std::size_t NetworkFabric::guillotine_sessions() const {
  std::size_t n = 0;
  for (const auto& [host, s] : sessions_) {
    if (local_.is_guillotine && hosts_.at(host).actually_guillotine) ++n;
  }
  return n;
}

}  // namespace guillotine::netid
