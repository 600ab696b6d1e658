#pragma once

// Live scenario service: one simulation thread owns the control loop;
// HTTP handlers talk to it only through the command queue and immutable
// snapshots.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lfctl/config.hpp"
#include "lfctl/scenario.hpp"

namespace httplib {
class Server;
}

namespace lfctl {

inline constexpr int kTelemetrySchemaVersion = 1;

enum class RunStatus { kRunning, kPaused, kFinished, kFaulted };

const char* run_status_name(RunStatus s);

// Per-tick telemetry frame.
nlohmann::json telemetry_frame(const SimRecord& rec, const std::vector<std::string>& state_channels,
                               const ConstraintSet& constraints);

struct CommandAck {
  bool accepted = false;
  int http_status = 200;  // 400 invalid, 409 stale sequence / finished / faulted
  std::string error;
  long tick = -1;  // first tick run with the command in effect
  long sequence = 0;
  std::string client;

  nlohmann::json to_json() const;
};

class ScenarioService {
 public:
  ScenarioService(Plant plant, ControlGains gains, ScenarioConfig cfg,
                  std::optional<StateSpaceModel> model, ServiceSettings settings);
  ~ScenarioService();
  ScenarioService(const ScenarioService&) = delete;
  ScenarioService& operator=(const ScenarioService&) = delete;

  // Optional CSV log of every executed tick; call before start().
  void log_to(const std::filesystem::path& path);
  void start();
  void stop();

  // Queues a command for the next tick boundary and waits for it to be
  // applied (or rejected). Safe from any thread.
  CommandAck submit(const std::string& client, long sequence, const Command& cmd,
                    std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

  nlohmann::json state() const;
  // Frames for ticks in [from, to], clipped to the recorded range and the
  // history limit.
  nlohmann::json history(long from, long to) const;
  nlohmann::json command_log() const;
  std::vector<LoggedCommand> logged_commands() const;

  RunStatus status() const;
  long ticks_done() const;
  // Blocks until the run finishes or faults, or the timeout passes.
  bool wait_until_done(std::chrono::milliseconds timeout) const;
  // Blocks until at least `ticks` ticks have executed.
  bool wait_for_ticks(long ticks, std::chrono::milliseconds timeout) const;
  std::vector<SimRecord> records() const;

  // Stream subscription: frames are queued per subscriber; a full queue
  // drops its oldest frame rather than delaying the simulation.
  class Subscription {
   public:
    // Waits up to `timeout` for frames; an empty result with closed() set
    // means the stream is over.
    std::vector<std::string> next(std::chrono::milliseconds timeout);
    bool closed() const;
    std::size_t dropped() const;

   private:
    friend class ScenarioService;
    explicit Subscription(std::size_t capacity) : capacity_(capacity) {}
    void push(const std::shared_ptr<const std::string>& frame);
    void close();

    std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::shared_ptr<const std::string>> frames_;
    bool closed_ = false;
    std::size_t dropped_ = 0;
  };

  std::shared_ptr<Subscription> subscribe();
  void unsubscribe(const std::shared_ptr<Subscription>& sub);

  // Installs the HTTP routes on `server`.
  void mount(httplib::Server& server);

 private:
  struct Pending {
    std::string client;
    long sequence = 0;
    Command command;
    std::promise<CommandAck> done;
  };

  struct Snapshot {
    std::optional<SimRecord> record;
    RunStatus status = RunStatus::kRunning;
    std::string fault;
    double speed = 0.0;
    long next_tick = 0;
    bool governor_enabled = false;
    ConstraintSet constraints;
    std::size_t commands = 0;
  };

  void run();
  void drain_commands();
  void publish(RunStatus status);
  std::shared_ptr<const Snapshot> snapshot() const;

  Simulation sim_;
  ServiceSettings settings_;
  std::unique_ptr<CsvLogWriter> log_;
  std::vector<std::string> state_channels_;
  std::vector<std::string> rejected_;  // stale-sequence rejections, guarded by queue_mu_

  mutable std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<Pending> queue_;
  std::map<std::string, long> last_sequence_;  // per client, guarded by queue_mu_
  bool stopping_ = false;

  mutable std::mutex snap_mu_;
  mutable std::condition_variable snap_cv_;
  std::shared_ptr<const Snapshot> snapshot_;

  mutable std::mutex hist_mu_;
  std::vector<SimRecord> history_;
  std::vector<LoggedCommand> log_entries_;

  mutable std::mutex sub_mu_;
  std::vector<std::shared_ptr<Subscription>> subscribers_;

  // Owned by the simulation thread.
  bool paused_ = false;
  double speed_ = 0.0;
  RunStatus status_ = RunStatus::kRunning;
  std::string fault_;

  std::thread worker_;
};

// Runs `service` behind an HTTP server on bind:port until the process is
// interrupted. Returns the listen result.
bool serve_http(ScenarioService& service, const std::string& bind, int port);

}  // namespace lfctl
