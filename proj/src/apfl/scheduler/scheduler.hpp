#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "apfl/aggregator/aggregator.hpp"

namespace apfl {

struct SchedulerAction {
  enum class Kind { buffered, aggregate, reply };

  Kind kind = Kind::buffered;
  // aggregate: ids of the updates handed to the aggregator, in hand-off order.
  std::vector<std::string> aggregated;
  // buffered: the submitting client; reply: the recipient.
  std::string client_id;
  std::shared_ptr<const ParameterSet> global;
  std::int64_t epoch = 0;
  int next_steps = 0;

  static SchedulerAction buffered_from(std::string client);
  static SchedulerAction aggregate_of(std::vector<std::string> ids);
};

enum class SchedulerKind { sync, async, compass };

SchedulerKind scheduler_from_name(const std::string& name);
std::string_view scheduler_name(SchedulerKind kind);

/// Decides when received updates reach the aggregator. Calls are expected to
/// be serialized by the caller; the scheduler owns no lock.
class Scheduler {
 public:
  Scheduler(Aggregator& aggregator, int default_steps);
  virtual ~Scheduler() = default;

  virtual SchedulerKind kind() const = 0;

  /// First contact from a client; returns the steps it should train.
  virtual int on_join(const std::string& client_id, double now);

  virtual std::vector<SchedulerAction> on_update(ModelUpdate update, double now) = 0;

  /// Time-driven work such as deadline-triggered group closure.
  virtual std::vector<SchedulerAction> on_tick(double now);

  virtual std::optional<double> next_deadline() const { return std::nullopt; }

  Aggregator& aggregator() { return aggregator_; }
  const Aggregator& aggregator() const { return aggregator_; }
  int default_steps() const { return default_steps_; }
  std::uint64_t updates_received() const { return updates_received_; }

 protected:
  SchedulerAction reply_to(const std::string& client, int steps,
                           std::shared_ptr<const ParameterSet> snapshot = nullptr) const;

  Aggregator& aggregator_;
  int default_steps_;
  std::uint64_t updates_received_ = 0;
};

/// Buffers until every client has submitted, then aggregates all of them.
class SyncScheduler final : public Scheduler {
 public:
  SyncScheduler(Aggregator& aggregator, int default_steps, std::size_t n_clients);
  SchedulerKind kind() const override { return SchedulerKind::sync; }
  std::vector<SchedulerAction> on_update(ModelUpdate update, double now) override;

  std::size_t buffered() const { return buffer_.size(); }

 private:
  std::size_t n_clients_;
  std::map<std::string, ModelUpdate> buffer_;
};

/// Hands every update to the aggregator immediately.
class AsyncScheduler final : public Scheduler {
 public:
  using Scheduler::Scheduler;
  SchedulerKind kind() const override { return SchedulerKind::async; }
  std::vector<SchedulerAction> on_update(ModelUpdate update, double now) override;
};

struct SpeedEstimate {
  std::string client_id;
  double per_step_time = 0.0;  // exponential moving average, seconds
  std::uint64_t observations = 0;

  void observe(double sample, double ema_weight);
};

struct GroupRecord {
  std::int64_t group_id = 0;
  std::set<std::string> members;
  std::set<std::string> arrived;
  double created_at = 0.0;
  // Predicted common arrival time; infinite while no member speed is known.
  double expected_arrival = std::numeric_limits<double>::infinity();
  std::map<std::string, int> assigned_steps;
  bool closed = false;

  /// created_at + (T_a - created_at) * (1 + latitude)
  double deadline(double latitude) const;
};

struct CompassParams {
  int qmin = 20;
  int qmax = 200;
  double latitude = 0.2;
  double ema_weight = 0.5;

  void validate() const;
};

struct Assignment {
  std::int64_t group_id = 0;
  int steps = 0;
};

/// Joins the earliest open group (ascending T_a) the client can reach with a
/// step count in [qmin, qmax]; otherwise founds a group with qmax steps.
/// A client with no speed observation founds a group with unknown T_a.
Assignment compass_assign(const SpeedEstimate& speed, double now, std::vector<GroupRecord>& groups,
                          const CompassParams& params, std::int64_t& next_group_id);

class CompassScheduler final : public Scheduler {
 public:
  CompassScheduler(Aggregator& aggregator, CompassParams params);
  SchedulerKind kind() const override { return SchedulerKind::compass; }

  int on_join(const std::string& client_id, double now) override;
  std::vector<SchedulerAction> on_update(ModelUpdate update, double now) override;
  std::vector<SchedulerAction> on_tick(double now) override;
  std::optional<double> next_deadline() const override;

  const std::vector<GroupRecord>& groups() const { return groups_; }
  const SpeedEstimate* speed(const std::string& client) const;
  const CompassParams& params() const { return params_; }

 private:
  std::vector<SchedulerAction> close_group(GroupRecord& group, double now);
  std::vector<SchedulerAction> reassign(std::vector<std::string> clients, double now);
  double population_samples() const;
  void prune();
  GroupRecord* group_by_id(std::int64_t id);

  CompassParams params_;
  std::vector<GroupRecord> groups_;
  std::map<std::string, SpeedEstimate> speeds_;
  std::map<std::string, std::int64_t> client_group_;
  std::map<std::string, double> dispatched_at_;
  std::map<std::string, std::uint64_t> samples_;
  std::map<std::int64_t, std::vector<ModelUpdate>> pending_;
  std::int64_t next_group_id_ = 0;
};

std::unique_ptr<Scheduler> make_scheduler(SchedulerKind kind, Aggregator& aggregator, int default_steps,
                                          std::size_t n_clients, CompassParams compass = {});

}  // namespace apfl
