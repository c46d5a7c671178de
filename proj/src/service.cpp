#include "guillotine/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>

namespace guillotine::simrun {

std::optional<ListenAddress> parse_listen_address(const std::string& text) {
  ListenAddress a;
  std::string port = text;
  if (auto colon = text.rfind(':'); colon != std::string::npos) {
    if (colon > 0) a.host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  if (a.host == "localhost") a.host = "127.0.0.1";
  if (port.empty() || port.size() > 5 || port.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  const auto p = std::stoul(port);
  if (p > 65535) return std::nullopt;
  a.port = static_cast<std::uint16_t>(p);
  in_addr probe{};
  if (inet_pton(AF_INET, a.host.c_str(), &probe) != 1) return std::nullopt;
  return a;
}

Server::Server(Scenario scenario, std::uint64_t seed, ServeOptions options)
    : scenario_(std::move(scenario)), seed_(seed), options_(std::move(options)) {
  deployment_ = std::make_unique<Deployment>(scenario_, seed_);
  deployment_->boot(options_.ticks);
  running_ = options_.start_running;
  ticks_per_second_ = options_.ticks_per_second;
}

Server::~Server() {
  if (sim_thread_.joinable()) {
    stop();
    wait();
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

std::uint16_t Server::start() {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(options_.address.port);
  inet_pton(AF_INET, options_.address.host.c_str(), &addr.sin_addr);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw std::runtime_error(std::string("bind: ") + std::strerror(errno));
  }
  if (::listen(listen_fd_, 16) != 0) throw std::runtime_error(std::string("listen: ") + std::strerror(errno));
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  accept_thread_ = std::thread([this] { accept_loop(); });
  sim_thread_ = std::thread([this] { sim_loop(); });
  return ntohs(addr.sin_port);
}

void Server::stop() {
  std::lock_guard lk(queue_mu_);
  queue_.push_back({nullptr, R"({"kind":"request","seq":0,"payload":{"op":"shutdown"}})"});
  queue_cv_.notify_all();
}

void Server::wait() {
  {
    std::unique_lock lk(done_mu_);
    done_cv_.wait(lk, [&] { return finished_; });
  }
  if (sim_thread_.joinable()) sim_thread_.join();
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> readers;
  {
    std::lock_guard lk(clients_mu_);
    readers.swap(readers_);
  }
  for (auto& t : readers) t.join();
  std::lock_guard lk(clients_mu_);
  for (auto& c : clients_) {
    if (c->fd >= 0) ::close(c->fd);
    c->fd = -1;
  }
  clients_.clear();
}

void Server::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_) return;
      if (errno == EINTR) continue;
      return;
    }
    auto client = std::make_shared<Client>();
    client->fd = fd;
    std::lock_guard lk(clients_mu_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    clients_.push_back(client);
    readers_.emplace_back([this, client] { read_loop(client); });
  }
}

void Server::read_loop(std::shared_ptr<Client> client) {
  std::string buffer;
  char chunk[4096];
  while (true) {
    const auto n = ::recv(client->fd, chunk, sizeof chunk, 0);
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = buffer.find('\n')) != std::string::npos) {
      std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (line.empty()) continue;
      std::lock_guard lk(queue_mu_);
      queue_.push_back({client, std::move(line)});
      queue_cv_.notify_all();
    }
  }
  client->alive = false;
}

void Server::send(Client& c, const Json& envelope) {
  if (!c.alive) return;
  std::string text = envelope.dump();
  text.push_back('\n');
  std::lock_guard lk(c.write_mu);
  std::size_t off = 0;
  while (off < text.size()) {
    const auto n = ::send(c.fd, text.data() + off, text.size() - off, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      c.alive = false;
      return;
    }
    off += static_cast<std::size_t>(n);
  }
}

void Server::reply(Client& c, const Json& seq, Json payload) {
  send(c, {{"kind", "reply"}, {"seq", seq}, {"payload", std::move(payload)}});
}

Json Server::summary() const {
  auto s = deployment_->summary();
  s["paused"] = !running_;
  s["ticks_per_second"] = ticks_per_second_;
  return s;
}

void Server::broadcast_events() {
  std::vector<std::shared_ptr<Client>> clients;
  {
    std::lock_guard lk(clients_mu_);
    clients = clients_;
  }
  const auto& records = deployment_->log().records();
  for (auto& c : clients) {
    if (!c->subscribed || !c->alive) continue;
    for (; c->next_seq < records.size(); ++c->next_seq) {
      const auto& r = records[c->next_seq];
      send(*c, {{"kind", "event"}, {"seq", r.seq}, {"payload", r.to_json()}});
    }
  }
}

void Server::broadcast_summary() {
  last_summary_ = deployment_->now();
  const auto s = summary();
  std::vector<std::shared_ptr<Client>> clients;
  {
    std::lock_guard lk(clients_mu_);
    clients = clients_;
  }
  for (auto& c : clients) {
    if (c->subscribed) send(*c, {{"kind", "summary"}, {"seq", s.at("last_seq")}, {"payload", s}});
  }
}

void Server::tick_once() {
  deployment_->step();
  broadcast_events();
  if (options_.summary_every > 0 && deployment_->now() - last_summary_ >= options_.summary_every) {
    broadcast_summary();
  }
}

void Server::handle(const Inbound& in) {
  Json msg;
  try {
    msg = Json::parse(in.line);
  } catch (const Json::exception& e) {
    if (in.client) reply(*in.client, nullptr, {{"ok", false}, {"error", std::string("malformed_command: ") + e.what()}});
    return;
  }
  const Json seq = msg.is_object() && msg.contains("seq") ? msg.at("seq") : Json(nullptr);
  auto fail = [&](const std::string& error) {
    if (in.client) reply(*in.client, seq, {{"ok", false}, {"error", error}});
  };
  if (!msg.is_object() || msg.value("kind", "") != "request" || !seq.is_number_unsigned() ||
      !msg.contains("payload") || !msg.at("payload").is_object() || !msg.at("payload").contains("op") ||
      !msg.at("payload").at("op").is_string()) {
    fail("malformed_command: expected {kind:\"request\", seq:<uint>, payload:{op:<string>}}");
    return;
  }
  const Json& p = msg.at("payload");
  const auto op = p.at("op").get<std::string>();
  auto ok = [&](Json extra = Json::object()) {
    extra["ok"] = true;
    extra["tick"] = deployment_->now();
    if (in.client) reply(*in.client, seq, std::move(extra));
  };

  if (op == "pause") {
    running_ = false;
    ok();
  } else if (op == "resume") {
    running_ = true;
    ok();
  } else if (op == "speed") {
    if (!p.contains("ticks_per_second") || !p.at("ticks_per_second").is_number() ||
        p.at("ticks_per_second").get<double>() < 0) {
      fail("malformed_command: 'ticks_per_second' must be a non-negative number");
      return;
    }
    ticks_per_second_ = p.at("ticks_per_second").get<double>();
    ok();
  } else if (op == "step") {
    const Json n = p.value("n", Json(1));
    if (!n.is_number_unsigned()) {
      fail("malformed_command: 'n' must be a non-negative integer");
      return;
    }
    for (std::uint64_t i = 0; i < n.get<std::uint64_t>(); ++i) tick_once();
    ok();
  } else if (op == "summary") {
    ok({{"summary", summary()}});
  } else if (op == "subscribe") {
    const Json from = p.value("from_seq", Json(0));
    if (!from.is_number_unsigned()) {
      fail("malformed_command: 'from_seq' must be a non-negative integer");
      return;
    }
    if (!in.client) return;
    in.client->subscribed = true;
    in.client->next_seq = std::min<std::uint64_t>(from.get<std::uint64_t>(), deployment_->log().size());
    ok();
    broadcast_events();
  } else if (op == "unsubscribe") {
    if (in.client) in.client->subscribed = false;
    ok();
  } else if (op == "command") {
    auto cmd = parse_command(p.value("command", Json(nullptr)));
    if (!cmd) {
      fail(cmd.error());
      return;
    }
    auto r = deployment_->apply_command(cmd.value());
    if (in.client) {
      Json payload{{"ok", r.ok}, {"result", r.result}, {"tick", deployment_->now()}};
      if (!r.ok) payload["error"] = r.error;
      reply(*in.client, seq, payload);
    }
  } else if (op == "shutdown") {
    report_ = deployment_->finish();
    final_log_ = deployment_->log().to_jsonl();
    if (options_.log_path) {
      std::ofstream f(*options_.log_path, std::ios::binary);
      f << final_log_;
    }
    broadcast_events();
    ok({{"report", report_.to_json()}});
    stopping_ = true;
    ::shutdown(listen_fd_, SHUT_RDWR);
    std::lock_guard lk(clients_mu_);
    for (auto& c : clients_) ::shutdown(c->fd, SHUT_RDWR);
    shutdown_requested_ = true;
  } else {
    fail("malformed_command: unknown op '" + op + "'");
  }
}

void Server::sim_loop() {
  using clock = std::chrono::steady_clock;
  auto next_tick = clock::now();
  while (true) {
    std::deque<Inbound> batch;
    {
      std::unique_lock lk(queue_mu_);
      if (!running_) {
        queue_cv_.wait(lk, [&] { return !queue_.empty(); });
      } else if (ticks_per_second_ > 0) {
        queue_cv_.wait_until(lk, next_tick, [&] { return !queue_.empty(); });
      }
      batch.swap(queue_);
    }
    for (const auto& in : batch) {
      handle(in);
      if (shutdown_requested_) {
        std::lock_guard lk(done_mu_);
        finished_ = true;
        done_cv_.notify_all();
        return;
      }
    }
    broadcast_events();
    if (running_ && (ticks_per_second_ <= 0 || clock::now() >= next_tick)) {
      tick_once();
      if (ticks_per_second_ > 0) {
        next_tick = std::max(next_tick + std::chrono::duration_cast<clock::duration>(
                                             std::chrono::duration<double>(1.0 / ticks_per_second_)),
                             clock::now() - std::chrono::seconds(1));
      }
    } else if (!running_) {
      next_tick = clock::now();
    }
  }
}

}  // namespace guillotine::simrun
