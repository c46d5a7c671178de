#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "guillotine/service.hpp"

using namespace guillotine;
using namespace guillotine::simrun;

namespace {

// Minimal line client over a blocking socket; reads are bounded by a deadline.
class LineClient {
 public:
  explicit LineClient(std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  }
  ~LineClient() { close(); }
  LineClient(const LineClient&) = delete;
  LineClient& operator=(const LineClient&) = delete;

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void send_raw(const std::string& line) {
    const std::string text = line + "\n";
    REQUIRE(::send(fd_, text.data(), text.size(), MSG_NOSIGNAL) == static_cast<ssize_t>(text.size()));
  }

  std::uint64_t request(Json payload) {
    const auto seq = next_seq_++;
    send_raw(Json{{"kind", "request"}, {"seq", seq}, {"payload", std::move(payload)}}.dump());
    return seq;
  }

  std::optional<Json> read_line(int timeout_ms = 5000) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (true) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        auto line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return Json::parse(line);
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      pollfd p{fd_, POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) return std::nullopt;
      char chunk[4096];
      const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n <= 0) return std::nullopt;
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  // Reads until the reply to `seq`, keeping every event seen on the way.
  Json reply_to(std::uint64_t seq, std::vector<Json>* events = nullptr) {
    while (auto msg = read_line()) {
      if (msg->at("kind") == "event" && events) events->push_back(*msg);
      if (msg->at("kind") == "reply" && msg->at("seq") == seq) return msg->at("payload");
    }
    FAIL("no reply to request " << seq);
    return {};
  }

  Json call(Json payload, std::vector<Json>* events = nullptr) { return reply_to(request(std::move(payload)), events); }

 private:
  int fd_ = -1;
  std::uint64_t next_seq_ = 1;
  std::string buffer_;
};

struct Hosted {
  Server server;
  std::uint16_t port;
  explicit Hosted(Tick ticks = 2000)
      : server(scenario_from_json({{"name", "serve"}, {"seed", 3}, {"ticks", ticks}, {"guest", "benign_echo"}}), 3,
               options(ticks)),
        port(server.start()) {}
  static ServeOptions options(Tick ticks) {
    ServeOptions o;
    o.ticks = ticks;
    return o;
  }
  ~Hosted() { server.stop(); }
};

Json command(const std::string& name, Json params) {
  return {{"op", "command"}, {"command", {{"name", name}, {"params", std::move(params)}}}};
}

}  // namespace

TEST_CASE("listen addresses") {
  auto a = parse_listen_address("0.0.0.0:7000");
  REQUIRE(a);
  CHECK(a->host == "0.0.0.0");
  CHECK(a->port == 7000);
  CHECK(parse_listen_address(":81")->host == "127.0.0.1");
  CHECK(parse_listen_address("82")->port == 82);
  CHECK_FALSE(parse_listen_address("host:notaport"));
  CHECK_FALSE(parse_listen_address("host:70000"));
}

TEST_CASE("malformed requests are answered with malformed_command and change nothing") {
  Hosted h;
  LineClient c(h.port);
  const auto tick = c.call({{"op", "summary"}}).at("tick");

  c.send_raw("this is not json");
  auto r = c.read_line();
  REQUIRE(r);
  CHECK(r->at("kind") == "reply");
  CHECK(r->at("payload").at("ok") == false);
  CHECK(r->at("payload").at("error").get<std::string>().rfind("malformed_command", 0) == 0);

  c.send_raw(R"({"kind":"request","seq":-1,"payload":{"op":"pause"}})");
  CHECK(c.read_line()->at("payload").at("error").get<std::string>().rfind("malformed_command", 0) == 0);

  for (const Json& bad : {Json{{"op", "teleport"}}, Json{{"op", "step"}, {"n", "three"}},
                          command("reboot", Json::object()), command("tally", {{"ballot_id", "one"}})}) {
    auto p = c.call(bad);
    CHECK(p.at("ok") == false);
    CHECK(p.at("error").get<std::string>().rfind("malformed_command", 0) == 0);
  }
  CHECK(c.call({{"op", "summary"}}).at("tick") == tick);
}

TEST_CASE("step n advances exactly n ticks while paused") {
  Hosted h;
  LineClient c(h.port);
  CHECK(c.call({{"op", "pause"}}).at("ok") == true);
  std::vector<Json> events;
  c.call({{"op", "subscribe"}, {"from_seq", 0}}, &events);
  const auto start = c.call({{"op", "summary"}}).at("tick").get<Tick>();
  events.clear();
  auto r = c.call({{"op", "step"}, {"n", 3}}, &events);
  CHECK(r.at("tick").get<Tick>() == start + 3);
  REQUIRE_FALSE(events.empty());
  for (const auto& e : events) {
    const auto t = e.at("payload").at("tick").get<Tick>();
    CHECK(t >= start);
    CHECK(t < start + 3);
  }
  // Paused means no further progress without a step.
  CHECK(c.call({{"op", "summary"}}).at("tick").get<Tick>() == start + 3);
}

TEST_CASE("a reconnecting subscriber resumes gaplessly from its last seq") {
  Hosted h;
  std::vector<Json> seen;
  {
    LineClient a(h.port);
    a.call({{"op", "pause"}});
    a.call({{"op", "subscribe"}, {"from_seq", 0}}, &seen);
    a.call({{"op", "step"}, {"n", 20}}, &seen);
  }
  REQUIRE_FALSE(seen.empty());
  const auto resume_from = seen.back().at("seq").get<std::uint64_t>() + 1;

  LineClient b(h.port);
  b.call({{"op", "step"}, {"n", 20}});  // progress made while nobody listens
  b.call({{"op", "subscribe"}, {"from_seq", resume_from}}, &seen);
  b.call({{"op", "step"}, {"n", 5}}, &seen);
  for (std::size_t i = 0; i < seen.size(); ++i) {
    CHECK(seen[i].at("seq").get<std::uint64_t>() == i);
    CHECK(seen[i].at("payload").at("seq").get<std::uint64_t>() == i);
  }
}

TEST_CASE("five signed votes and a tally relax the level; the session log replays") {
  Hosted h;
  LineClient c(h.port);
  c.call({{"op", "pause"}});
  c.call({{"op", "step"}, {"n", 50}});

  auto sev = c.call(command("admin_vote", {{"proposal", {{"kind", "transition"}, {"to", "Severed"}}},
                                           {"approve", {1, 2, 3}}}));
  REQUIRE(sev.at("ok") == true);
  c.call({{"op", "step"}, {"n", 5}});
  CHECK(c.call({{"op", "summary"}}).at("summary").at("level") == "Severed");

  auto open = c.call(command("open_ballot", {{"proposal", {{"kind", "transition"}, {"to", "Standard"}}}}));
  REQUIRE(open.at("ok") == true);
  const auto ballot = open.at("result").at("ballot_id").get<std::uint32_t>();
  for (std::uint32_t admin = 1; admin <= 5; ++admin) {
    CHECK(c.call(command("cast_vote", {{"ballot_id", ballot}, {"admin_id", admin}, {"choice", "approve"}}))
              .at("ok") == true);
  }
  auto tally = c.call(command("tally", {{"ballot_id", ballot}}));
  REQUIRE(tally.at("ok") == true);
  CHECK(tally.at("result").at("passed") == true);

  std::vector<Json> events;
  c.call({{"op", "subscribe"}, {"from_seq", 0}}, &events);
  events.clear();
  c.call({{"op", "step"}, {"n", 5}}, &events);
  bool relaxed = false;
  for (const auto& e : events) {
    const auto& p = e.at("payload");
    if (p.at("source") == "isolation" && p.at("type") == "transition" && p.at("payload").at("to") == "Standard") {
      relaxed = true;
    }
  }
  CHECK(relaxed);

  auto done = c.call({{"op", "shutdown"}});
  CHECK(done.at("ok") == true);
  CHECK(done.contains("report"));
  h.server.wait();
  auto r = replay(h.server.final_log());
  CHECK(r.error.empty());
  CHECK(r.identical);
}
