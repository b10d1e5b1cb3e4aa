#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "apfl/comm/envelope.hpp"
#include "apfl/comm/transport.hpp"
#include "apfl/harness/config.hpp"
#include "apfl/harness/simulator.hpp"

namespace apfl {

/// Server state machine behind the wire. Thread-safe: every connection thread
/// calls handle() and update submissions block until the scheduler replies.
class ServerRuntime {
 public:
  ServerRuntime(const ExperimentConfig& cfg, std::shared_ptr<DataConnector> connector = nullptr);
  ~ServerRuntime();

  Frame handle(const Frame& request, const std::string& identity);

  /// True once the stopping rule fired and every client has been told.
  bool wait_finished(std::chrono::milliseconds timeout);
  bool done() const;

  /// Flushes leftovers and returns metrics and the final model. Call once,
  /// after the transport has stopped.
  SimResult finish();

  /// Wall-clock seconds since construction at each new global version.
  const std::vector<MetricRecord>& wall_records() const { return wall_; }

 private:
  Frame on_config(const Envelope& req, const std::string& id);
  Frame on_model(const std::string& id);
  Frame on_update(const Envelope& req, const std::string& id);
  void process(std::vector<SchedulerAction> actions);  // mu_ held
  void check_done();                                   // mu_ held
  void timer_loop();
  double now() const;
  Frame reply_frame(MessageType type, std::map<std::string, std::string> meta, const ParameterSet* params);
  std::string resolve_identity(const Envelope& req, const std::string& identity) const;

  const ExperimentConfig& cfg_;
  ModelSpec spec_;
  Dataset val_;
  std::unique_ptr<Aggregator> aggregator_;
  std::unique_ptr<Scheduler> scheduler_;
  std::shared_ptr<DataConnector> connector_;
  ConnectorRegistry registry_;
  std::size_t inline_limit_ = kDefaultInlineLimit;
  std::chrono::steady_clock::time_point start_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, SchedulerAction> pending_;
  std::map<std::string, bool> told_done_;
  std::int64_t last_epoch_ = 0;
  std::int64_t aggregations_ = 0;
  bool done_ = false;
  bool stopping_ = false;
  std::vector<MetricRecord> records_;
  std::vector<MetricRecord> wall_;
  std::thread timer_;
};

struct ServerRunOptions {
  std::optional<std::uint16_t> port;  // overrides the configured bind port
  std::shared_ptr<DataConnector> connector;
  std::function<void(std::uint16_t)> on_listening;
  std::chrono::milliseconds drain_timeout{30000};  // waiting for late clients after the end
};

/// Serves one experiment and returns once it has finished.
SimResult run_server(const ExperimentConfig& cfg, const ServerRunOptions& opts = {});

struct ClientRunOptions {
  std::optional<std::string> host;
  std::optional<std::uint16_t> port;
  std::optional<std::string> token;  // else $APFL_TOKEN, else the file's token
  std::shared_ptr<DataConnector> connector;
  std::optional<RetryPolicy> retry;
};

struct ClientRunResult {
  std::string client_id;
  int rounds = 0;
};

/// The client half: fetches the shared configuration, then trains until told to stop.
ClientRunResult run_client(const YAML::Node& own, const ClientRunOptions& opts = {});

}  // namespace apfl
