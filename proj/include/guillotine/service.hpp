#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "guillotine/scenario.hpp"
#include "guillotine/simrun.hpp"

namespace guillotine::simrun {

// Wire protocol: one JSON object per line, envelope {kind, seq, payload}.
//
//   client -> server   {"kind":"request","seq":n,"payload":{"op":...}}
//   server -> client   {"kind":"reply","seq":n,"payload":{"ok":bool,...}}      answers request n
//                      {"kind":"event","seq":s,"payload":<EventRecord>}        s is the record seq
//                      {"kind":"summary","seq":s,"payload":<state summary>}    state as of record s
//
// ops: pause, resume, step {n}, speed {ticks_per_second}, summary,
//      subscribe {from_seq}, unsubscribe, command {command:{name,params}}, shutdown.

struct ListenAddress {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// Parses "host:port" (":port" and "port" mean 127.0.0.1).
std::optional<ListenAddress> parse_listen_address(const std::string& text);

struct ServeOptions {
  ListenAddress address;
  Tick summary_every = 100;    // ticks between periodic summaries
  double ticks_per_second = 0; // 0 runs as fast as possible while resumed
  bool start_running = false;
  Tick ticks = 0;              // recorded as the requested run length
  std::optional<std::filesystem::path> log_path;
};

/// Hosts one deployment for interactive clients. A single simulation thread
/// owns the deployment; connection threads only parse lines and enqueue them.
class Server {
 public:
  Server(Scenario scenario, std::uint64_t seed, ServeOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds, listens and starts the threads. Returns the bound port.
  std::uint16_t start();
  /// Blocks until a client sends shutdown (or stop() is called).
  void wait();
  /// Requests shutdown from outside the protocol.
  void stop();

  /// The complete event log, available after wait() returns.
  [[nodiscard]] const std::string& final_log() const noexcept { return final_log_; }
  [[nodiscard]] const RunReport& report() const noexcept { return report_; }

 private:
  struct Client {
    int fd = -1;
    std::mutex write_mu;
    bool subscribed = false;
    std::uint64_t next_seq = 0;
    std::atomic<bool> alive{true};
  };
  struct Inbound {
    std::shared_ptr<Client> client;
    std::string line;
  };

  void accept_loop();
  void read_loop(std::shared_ptr<Client> client);
  void sim_loop();
  void handle(const Inbound& in);
  void send(Client& c, const Json& envelope);
  void reply(Client& c, const Json& seq, Json payload);
  void broadcast_events();
  void broadcast_summary();
  Json summary() const;
  void tick_once();

  Scenario scenario_;
  std::uint64_t seed_;
  ServeOptions options_;
  std::unique_ptr<Deployment> deployment_;

  int listen_fd_ = -1;
  std::thread accept_thread_;
  std::thread sim_thread_;
  std::vector<std::thread> readers_;
  std::mutex clients_mu_;
  std::vector<std::shared_ptr<Client>> clients_;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<Inbound> queue_;
  std::atomic<bool> stopping_{false};
  bool finished_ = false;
  std::mutex done_mu_;
  std::condition_variable done_cv_;

  // Owned by the simulation thread.
  bool running_ = false;
  bool shutdown_requested_ = false;
  double ticks_per_second_ = 0;
  Tick last_summary_ = 0;

  std::string final_log_;
  RunReport report_;
};

}  // namespace guillotine::simrun
