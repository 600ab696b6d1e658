#include "lfctl/service.hpp"

#include <charconv>
#include <csignal>

#include <httplib.h>

namespace lfctl {

using nlohmann::json;

const char* run_status_name(RunStatus s) {
  switch (s) {
    case RunStatus::kRunning: return "running";
    case RunStatus::kPaused: return "paused";
    case RunStatus::kFinished: return "finished";
    case RunStatus::kFaulted: return "faulted";
  }
  return "unknown";
}

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

const std::vector<std::string>& extra_state_fields() {
  static const std::vector<std::string> names{"n", "Q_RX", "rho_ext", "rho_total"};
  return names;
}

}  // namespace

json telemetry_frame(const SimRecord& rec, const std::vector<std::string>& state_channels,
                     const ConstraintSet& constraints) {
  json states = json::object();
  for (const auto& name : state_channels) states[name] = rec.plant.value(name);
  for (const auto& name : extra_state_fields()) states[name] = rec.plant.value(name);

  json measured = json::object();
  const auto& meas = measured_channel_names();
  for (std::size_t i = 0; i < meas.size() && static_cast<Eigen::Index>(i) < rec.measured.size(); ++i) {
    measured[meas[i]] = rec.measured(static_cast<Eigen::Index>(i));
  }
  json denoised = json::object();
  for (std::size_t i = 0; i < state_channels.size() &&
                          static_cast<Eigen::Index>(i) < rec.denoised.size();
       ++i) {
    denoised[state_channels[i]] = rec.denoised(static_cast<Eigen::Index>(i));
  }
  json observer = {{"n", rec.observer(kIdxN)}, {"alpha", rec.observer(kIdxAlpha)},
                   {"omega", rec.observer(kIdxOmega)}};
  for (int i = 0; i < kPrecursorGroups; ++i) {
    observer["C" + std::to_string(i + 1)] = rec.observer(1 + i);
  }

  const GovernorDecision& d = rec.decision;
  json governor = {{"r", d.r},
                   {"v", d.v},
                   {"kappa", d.kappa},
                   {"band", {finite_or_null(d.band_lo), finite_or_null(d.band_hi)}},
                   {"binding", binding_name(d.binding)},
                   {"binding_constraint", d.binding_constraint},
                   {"binding_step", d.binding_step},
                   {"alarm", d.alarm},
                   {"enabled", d.binding != Binding::kBypass}};

  json cons = json::array();
  for (std::size_t i = 0; i < constraints.outputs.size(); ++i) {
    const auto& c = constraints.outputs[i];
    const double b = i < rec.bounds.size() ? rec.bounds[i] : std::numeric_limits<double>::quiet_NaN();
    cons.push_back({{"name", c.name},
                    {"output", c.output},
                    {"sense", c.sense == Sense::kMin ? "min" : "max"},
                    {"bound", finite_or_null(b)},
                    {"enabled", !std::isnan(b)}});
  }
  return {{"schema_version", kTelemetrySchemaVersion},
          {"tick", rec.tick},
          {"t", rec.plant.t},
          {"states", std::move(states)},
          {"measured", std::move(measured)},
          {"denoised", std::move(denoised)},
          {"observer", std::move(observer)},
          {"governor", std::move(governor)},
          {"constraints", std::move(cons)},
          {"actuation",
           {{"rho_ext", rec.actuation.rho_ext},
            {"head_p", rec.actuation.head_p},
            {"head_s", rec.actuation.head_s}}}};
}

json CommandAck::to_json() const {
  json j{{"accepted", accepted}, {"client", client}, {"sequence", sequence}};
  if (accepted) {
    j["tick"] = tick;
  } else {
    j["error"] = error;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Subscriptions

std::vector<std::string> ScenarioService::Subscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return !frames_.empty() || closed_; });
  std::vector<std::string> out;
  out.reserve(frames_.size());
  for (const auto& f : frames_) out.push_back(*f);
  frames_.clear();
  return out;
}

bool ScenarioService::Subscription::closed() const {
  std::lock_guard<std::mutex> lock(mu_);
  return closed_ && frames_.empty();
}

std::size_t ScenarioService::Subscription::dropped() const {
  std::lock_guard<std::mutex> lock(mu_);
  return dropped_;
}

void ScenarioService::Subscription::push(const std::shared_ptr<const std::string>& frame) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (closed_) return;
    if (frames_.size() >= capacity_) {
      frames_.pop_front();
      ++dropped_;
    }
    frames_.push_back(frame);
  }
  cv_.notify_one();
}

void ScenarioService::Subscription::close() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

// ---------------------------------------------------------------------------
// Service

ScenarioService::ScenarioService(Plant plant, ControlGains gains, ScenarioConfig cfg,
                                 std::optional<StateSpaceModel> model, ServiceSettings settings)
    : sim_(std::move(plant), gains, std::move(cfg), std::move(model)),
      settings_(std::move(settings)) {
  state_channels_ = sim_.state_channels();
  paused_ = settings_.start_paused;
  speed_ = settings_.speed;
  status_ = paused_ ? RunStatus::kPaused : RunStatus::kRunning;
  history_.reserve(static_cast<std::size_t>(sim_.config().ticks()));
  publish(status_);
}

ScenarioService::~ScenarioService() { stop(); }

void ScenarioService::log_to(const std::filesystem::path& path) {
  if (worker_.joinable()) throw std::logic_error("log_to must be called before start");
  log_ = std::make_unique<CsvLogWriter>(path, sim_.column_names());
}

void ScenarioService::start() {
  if (worker_.joinable()) return;
  worker_ = std::thread([this] { run(); });
}

void ScenarioService::stop() {
  {
    std::lock_guard<std::mutex> lock(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
  // Anything still queued never reached a tick boundary.
  std::deque<Pending> left;
  {
    std::lock_guard<std::mutex> lock(queue_mu_);
    left.swap(queue_);
  }
  for (auto& p : left) {
    CommandAck ack;
    ack.client = p.client;
    ack.sequence = p.sequence;
    ack.http_status = 409;
    ack.error = "service stopped";
    p.done.set_value(ack);
  }
  std::lock_guard<std::mutex> lock(sub_mu_);
  for (auto& s : subscribers_) s->close();
  subscribers_.clear();
  if (log_) {
    log_->close();
    log_.reset();
  }
}

CommandAck ScenarioService::submit(const std::string& client, long sequence, const Command& cmd,
                                   std::chrono::milliseconds timeout) {
  CommandAck ack;
  ack.client = client;
  ack.sequence = sequence;
  const RunStatus st = snapshot()->status;
  if (st == RunStatus::kFinished || st == RunStatus::kFaulted) {
    ack.http_status = 409;
    ack.error = std::string("scenario is ") + run_status_name(st);
    return ack;
  }
  std::future<CommandAck> fut;
  {
    std::lock_guard<std::mutex> lock(queue_mu_);
    if (stopping_) {
      ack.http_status = 409;
      ack.error = "service stopped";
      return ack;
    }
    auto it = last_sequence_.find(client);
    if (it != last_sequence_.end() && sequence <= it->second) {
      ack.http_status = 409;
      ack.error = "stale sequence " + std::to_string(sequence) + " (last accepted " +
                  std::to_string(it->second) + ")";
      rejected_.push_back(client + "#" + std::to_string(sequence));
      return ack;
    }
    last_sequence_[client] = sequence;
    Pending p;
    p.client = client;
    p.sequence = sequence;
    p.command = cmd;
    fut = p.done.get_future();
    queue_.push_back(std::move(p));
  }
  queue_cv_.notify_all();
  if (fut.wait_for(timeout) != std::future_status::ready) {
    ack.http_status = 503;
    ack.error = "timed out waiting for a tick boundary";
    return ack;
  }
  return fut.get();
}

void ScenarioService::drain_commands() {
  std::deque<Pending> batch;
  {
    std::lock_guard<std::mutex> lock(queue_mu_);
    batch.swap(queue_);
  }
  if (batch.empty()) return;
  for (auto& p : batch) {
    CommandAck ack;
    ack.client = p.client;
    ack.sequence = p.sequence;
    if (status_ == RunStatus::kFinished || status_ == RunStatus::kFaulted) {
      ack.http_status = 409;
      ack.error = std::string("scenario is ") + run_status_name(status_);
      p.done.set_value(ack);
      continue;
    }
    try {
      switch (p.command.kind) {
        case Command::Kind::kPause: paused_ = true; break;
        case Command::Kind::kResume: paused_ = false; break;
        case Command::Kind::kSetSpeed: speed_ = p.command.value; break;
        default: sim_.apply(p.command); break;
      }
    } catch (const ConfigError& e) {
      ack.http_status = 400;
      ack.error = e.what();
      p.done.set_value(ack);
      continue;
    }
    status_ = paused_ ? RunStatus::kPaused : RunStatus::kRunning;
    ack.accepted = true;
    ack.tick = sim_.next_tick();
    {
      std::lock_guard<std::mutex> lock(hist_mu_);
      log_entries_.push_back({ack.tick, p.sequence, p.client, p.command});
    }
    p.done.set_value(ack);
  }
  publish(status_);
}

void ScenarioService::publish(RunStatus status) {
  auto snap = std::make_shared<Snapshot>();
  if (sim_.next_tick() > 0) snap->record = sim_.last();
  snap->status = status;
  snap->fault = fault_;
  snap->speed = speed_;
  snap->next_tick = sim_.next_tick();
  snap->governor_enabled = sim_.governor_enabled();
  snap->constraints = sim_.governor() ? sim_.governor()->constraints() : sim_.config().constraints;
  {
    std::lock_guard<std::mutex> lock(hist_mu_);
    snap->commands = log_entries_.size();
  }
  {
    std::lock_guard<std::mutex> lock(snap_mu_);
    snapshot_ = std::move(snap);
  }
  snap_cv_.notify_all();
}

std::shared_ptr<const ScenarioService::Snapshot> ScenarioService::snapshot() const {
  std::lock_guard<std::mutex> lock(snap_mu_);
  return snapshot_;
}

void ScenarioService::run() {
  using clock = std::chrono::steady_clock;
  auto next_deadline = clock::now();
  while (true) {
    drain_commands();
    {
      std::unique_lock<std::mutex> lock(queue_mu_);
      if (stopping_) break;
      if (paused_ || status_ == RunStatus::kFinished || status_ == RunStatus::kFaulted) {
        queue_cv_.wait_for(lock, std::chrono::milliseconds(200),
                           [&] { return stopping_ || !queue_.empty(); });
        next_deadline = clock::now();
        continue;
      }
    }
    try {
      const SimRecord& rec = sim_.step();
      {
        std::lock_guard<std::mutex> lock(hist_mu_);
        history_.push_back(rec);
      }
      if (log_) log_->push(rec.values());
      std::vector<std::shared_ptr<Subscription>> subs;
      {
        std::lock_guard<std::mutex> lock(sub_mu_);
        subs = subscribers_;
      }
      if (!subs.empty()) {
        const ConstraintSet& cs =
            sim_.governor() ? sim_.governor()->constraints() : sim_.config().constraints;
        auto frame = std::make_shared<const std::string>(
            "data: " + telemetry_frame(rec, state_channels_, cs).dump() + "\n\n");
        for (auto& s : subs) s->push(frame);
      }
      if (sim_.finished()) {
        status_ = RunStatus::kFinished;
        if (log_) log_->close();
      }
    } catch (const std::exception& e) {
      status_ = RunStatus::kFaulted;
      fault_ = e.what();
    }
    publish(status_);
    if (status_ == RunStatus::kFinished || status_ == RunStatus::kFaulted) {
      std::lock_guard<std::mutex> lock(sub_mu_);
      for (auto& s : subscribers_) s->close();
      continue;
    }
    if (speed_ > 0.0) {
      next_deadline += std::chrono::duration_cast<clock::duration>(
          std::chrono::duration<double>(sim_.config().dt / speed_));
      const auto now = clock::now();
      if (next_deadline < now) next_deadline = now;
      std::unique_lock<std::mutex> lock(queue_mu_);
      queue_cv_.wait_until(lock, next_deadline, [&] { return stopping_; });
    } else {
      next_deadline = clock::now();
    }
  }
}

json ScenarioService::state() const {
  const auto snap = snapshot();
  json j{{"schema_version", kTelemetrySchemaVersion},
         {"status", run_status_name(snap->status)},
         {"speed", snap->speed},
         {"next_tick", snap->next_tick},
         {"total_ticks", sim_.config().ticks()},
         {"dt", sim_.config().dt},
         {"governor_enabled", snap->governor_enabled},
         {"governor_available", sim_.governor_available()},
         {"commands_applied", snap->commands}};
  if (!snap->fault.empty()) j["fault"] = snap->fault;
  j["frame"] = snap->record ? telemetry_frame(*snap->record, state_channels_, snap->constraints)
                            : json(nullptr);
  return j;
}

json ScenarioService::history(long from, long to) const {
  const auto snap = snapshot();
  std::lock_guard<std::mutex> lock(hist_mu_);
  const long last = static_cast<long>(history_.size()) - 1;
  json frames = json::array();
  const long lo = std::max(0L, from);
  long hi = std::min(last, to);
  bool truncated = false;
  if (hi - lo + 1 > settings_.history_limit) {
    hi = lo + settings_.history_limit - 1;
    truncated = true;
  }
  for (long k = lo; k <= hi; ++k) {
    frames.push_back(telemetry_frame(history_[static_cast<std::size_t>(k)], state_channels_,
                                     snap->constraints));
  }
  return {{"from", lo}, {"to", hi}, {"available", last + 1}, {"truncated", truncated},
          {"frames", std::move(frames)}};
}

json ScenarioService::command_log() const {
  json j;
  {
    std::lock_guard<std::mutex> lock(hist_mu_);
    j = command_log_to_json(log_entries_);
  }
  std::lock_guard<std::mutex> lock(queue_mu_);
  j["rejected"] = rejected_;
  return j;
}

std::vector<LoggedCommand> ScenarioService::logged_commands() const {
  std::lock_guard<std::mutex> lock(hist_mu_);
  return log_entries_;
}

RunStatus ScenarioService::status() const { return snapshot()->status; }

long ScenarioService::ticks_done() const { return snapshot()->next_tick; }

bool ScenarioService::wait_until_done(std::chrono::milliseconds timeout) const {
  std::unique_lock<std::mutex> lock(snap_mu_);
  return snap_cv_.wait_for(lock, timeout, [&] {
    return snapshot_->status == RunStatus::kFinished || snapshot_->status == RunStatus::kFaulted;
  });
}

bool ScenarioService::wait_for_ticks(long ticks, std::chrono::milliseconds timeout) const {
  std::unique_lock<std::mutex> lock(snap_mu_);
  return snap_cv_.wait_for(lock, timeout, [&] {
    return snapshot_->next_tick >= ticks || snapshot_->status == RunStatus::kFaulted ||
           snapshot_->status == RunStatus::kFinished;
  });
}

std::vector<SimRecord> ScenarioService::records() const {
  std::lock_guard<std::mutex> lock(hist_mu_);
  return history_;
}

std::shared_ptr<ScenarioService::Subscription> ScenarioService::subscribe() {
  std::shared_ptr<Subscription> sub(new Subscription(settings_.stream_buffer));
  const RunStatus st = status();
  if (st == RunStatus::kFinished || st == RunStatus::kFaulted) {
    sub->close();
    return sub;
  }
  std::lock_guard<std::mutex> lock(sub_mu_);
  subscribers_.push_back(sub);
  return sub;
}

void ScenarioService::unsubscribe(const std::shared_ptr<Subscription>& sub) {
  std::lock_guard<std::mutex> lock(sub_mu_);
  subscribers_.erase(std::remove(subscribers_.begin(), subscribers_.end(), sub),
                     subscribers_.end());
  sub->close();
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& reason) {
  send_json(res, status, {{"error", reason}});
}

std::optional<long> parse_long(const std::string& s) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

void ScenarioService::mount(httplib::Server& server) {
  server.Get("/state", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, state());
  });

  server.Get("/history", [this](const httplib::Request& req, httplib::Response& res) {
    long from = 0;
    long to = std::numeric_limits<long>::max();
    if (req.has_param("from")) {
      const auto v = parse_long(req.get_param_value("from"));
      if (!v || *v < 0) return send_error(res, 400, "'from' must be a non-negative integer tick");
      from = *v;
    }
    if (req.has_param("to")) {
      const auto v = parse_long(req.get_param_value("to"));
      if (!v || *v < 0) return send_error(res, 400, "'to' must be a non-negative integer tick");
      to = *v;
    }
    if (from > to) return send_error(res, 400, "'from' must not exceed 'to'");
    send_json(res, 200, history(from, to));
  });

  server.Get("/commands", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, command_log());
  });

  server.Post("/command", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("malformed JSON: ") + e.what());
    }
    if (!body.is_object()) return send_error(res, 400, "command must be a JSON object");
    if (!body.contains("client") || !body["client"].is_string() ||
        body["client"].get<std::string>().empty()) {
      return send_error(res, 400, "command needs a non-empty string 'client'");
    }
    if (!body.contains("sequence") || !body["sequence"].is_number_integer()) {
      return send_error(res, 400, "command needs an integer 'sequence'");
    }
    Command cmd;
    try {
      cmd = Command::from_json(body);
    } catch (const ConfigError& e) {
      return send_error(res, 400, e.what());
    }
    const CommandAck ack = submit(body["client"].get<std::string>(), body["sequence"].get<long>(), cmd);
    send_json(res, ack.accepted ? 200 : ack.http_status, ack.to_json());
  });

  server.Get("/stream", [this](const httplib::Request&, httplib::Response& res) {
    auto sub = subscribe();
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, sub](std::size_t, httplib::DataSink& sink) {
          const auto frames = sub->next(std::chrono::milliseconds(500));
          for (const auto& f : frames) {
            if (!sink.write(f.data(), f.size())) {
              unsubscribe(sub);
              return false;
            }
          }
          if (frames.empty() && sub->closed()) {
            sink.done();
            return true;
          }
          if (frames.empty()) {
            static const std::string keepalive = ": keepalive\n\n";
            if (!sink.write(keepalive.data(), keepalive.size())) {
              unsubscribe(sub);
              return false;
            }
          }
          return true;
        },
        [this, sub](bool) { unsubscribe(sub); });
  });
}

namespace {

std::atomic<httplib::Server*> g_server{nullptr};

void handle_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

bool serve_http(ScenarioService& service, const std::string& bind, int port) {
  httplib::Server server;
  service.mount(server);
  g_server = &server;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  service.start();
  const bool ok = server.listen(bind, port);
  g_server = nullptr;
  service.stop();
  return ok;
}

}  // namespace lfctl
