#include "apfl/scheduler/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "apfl/error.hpp"

namespace apfl {

SchedulerAction SchedulerAction::buffered_from(std::string client) {
  SchedulerAction a;
  a.kind = Kind::buffered;
  a.client_id = std::move(client);
  return a;
}

SchedulerAction SchedulerAction::aggregate_of(std::vector<std::string> ids) {
  SchedulerAction a;
  a.kind = Kind::aggregate;
  a.aggregated = std::move(ids);
  return a;
}

SchedulerKind scheduler_from_name(const std::string& raw) {
  std::string name = raw;
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "sync" || name == "syncscheduler") return SchedulerKind::sync;
  if (name == "async" || name == "asyncscheduler") return SchedulerKind::async;
  if (name == "compass" || name == "compassscheduler") return SchedulerKind::compass;
  fail(Errc::unknown_strategy_name, "no scheduler named '" + raw + "'");
}

std::string_view scheduler_name(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::sync: return "SyncScheduler";
    case SchedulerKind::async: return "AsyncScheduler";
    case SchedulerKind::compass: return "CompassScheduler";
  }
  return "?";
}

Scheduler::Scheduler(Aggregator& aggregator, int default_steps)
    : aggregator_(aggregator), default_steps_(default_steps) {
  if (default_steps < 1) fail(Errc::invalid_argument, "default steps must be >= 1");
}

int Scheduler::on_join(const std::string&, double) { return default_steps_; }

std::vector<SchedulerAction> Scheduler::on_tick(double) { return {}; }

SchedulerAction Scheduler::reply_to(const std::string& client, int steps,
                                    std::shared_ptr<const ParameterSet> snapshot) const {
  SchedulerAction a;
  a.kind = SchedulerAction::Kind::reply;
  a.client_id = client;
  a.global = snapshot ? std::move(snapshot) : std::make_shared<const ParameterSet>(aggregator_.global());
  a.epoch = aggregator_.epoch();
  a.next_steps = steps;
  return a;
}

SyncScheduler::SyncScheduler(Aggregator& aggregator, int default_steps, std::size_t n_clients)
    : Scheduler(aggregator, default_steps), n_clients_(n_clients) {
  if (n_clients == 0) fail(Errc::invalid_argument, "sync scheduler needs at least one client");
}

std::vector<SchedulerAction> SyncScheduler::on_update(ModelUpdate update, double) {
  if (buffer_.contains(update.client_id))
    fail(Errc::duplicate_update, "client " + update.client_id + " already submitted this round");
  ++updates_received_;
  const std::string id = update.client_id;
  buffer_.emplace(id, std::move(update));
  if (buffer_.size() < n_clients_) return {SchedulerAction::buffered_from(id)};

  std::vector<ModelUpdate> round;
  std::vector<std::string> ids;
  for (auto& [client, u] : buffer_) {
    ids.push_back(client);
    round.push_back(std::move(u));
  }
  buffer_.clear();
  aggregator_.aggregate(round);

  std::vector<SchedulerAction> out{SchedulerAction::aggregate_of(ids)};
  auto snapshot = std::make_shared<const ParameterSet>(aggregator_.global());
  for (const auto& client : ids) {
    out.push_back(reply_to(client, default_steps_, snapshot));
  }
  return out;
}

std::vector<SchedulerAction> AsyncScheduler::on_update(ModelUpdate update, double) {
  ++updates_received_;
  const std::string id = update.client_id;
  aggregator_.aggregate(std::span<const ModelUpdate>(&update, 1));
  return {SchedulerAction::aggregate_of({id}), reply_to(id, default_steps_)};
}

void SpeedEstimate::observe(double sample, double ema_weight) {
  if (!(sample > 0.0) || !std::isfinite(sample)) return;
  per_step_time = observations == 0 ? sample : ema_weight * sample + (1.0 - ema_weight) * per_step_time;
  ++observations;
}

double GroupRecord::deadline(double latitude) const {
  if (!std::isfinite(expected_arrival)) return expected_arrival;
  return created_at + (expected_arrival - created_at) * (1.0 + latitude);
}

void CompassParams::validate() const {
  if (qmin < 1 || qmin > qmax) fail(Errc::invalid_bounds, "need 1 <= qmin <= qmax");
  if (!(latitude >= 0.0)) fail(Errc::invalid_bounds, "latitude must be >= 0");
  if (!(ema_weight > 0.0 && ema_weight <= 1.0)) fail(Errc::invalid_bounds, "ema weight must be in (0, 1]");
}

Assignment compass_assign(const SpeedEstimate& speed, double now, std::vector<GroupRecord>& groups,
                          const CompassParams& params, std::int64_t& next_group_id) {
  params.validate();
  if (speed.observations > 0) {
    std::vector<GroupRecord*> open;
    for (auto& g : groups)
      if (!g.closed && std::isfinite(g.expected_arrival) && g.expected_arrival > now) open.push_back(&g);
    std::stable_sort(open.begin(), open.end(), [](const GroupRecord* a, const GroupRecord* b) {
      return a->expected_arrival < b->expected_arrival;
    });
    for (GroupRecord* g : open) {
      const double q = std::round((g->expected_arrival - now) / speed.per_step_time);
      if (q >= params.qmin && q <= params.qmax) {
        const int steps = static_cast<int>(q);
        g->members.insert(speed.client_id);
        g->assigned_steps[speed.client_id] = steps;
        return {g->group_id, steps};
      }
    }
  }
  GroupRecord g;
  g.group_id = next_group_id++;
  g.created_at = now;
  if (speed.observations > 0) g.expected_arrival = now + params.qmax * speed.per_step_time;
  g.members.insert(speed.client_id);
  g.assigned_steps[speed.client_id] = params.qmax;
  groups.push_back(std::move(g));
  return {groups.back().group_id, params.qmax};
}

CompassScheduler::CompassScheduler(Aggregator& aggregator, CompassParams params)
    : Scheduler(aggregator, params.qmax), params_(params) {
  params_.validate();
}

const SpeedEstimate* CompassScheduler::speed(const std::string& client) const {
  auto it = speeds_.find(client);
  return it == speeds_.end() ? nullptr : &it->second;
}

GroupRecord* CompassScheduler::group_by_id(std::int64_t id) {
  for (auto& g : groups_)
    if (g.group_id == id) return &g;
  return nullptr;
}

int CompassScheduler::on_join(const std::string& client_id, double now) {
  auto& s = speeds_[client_id];
  s.client_id = client_id;
  const Assignment a = compass_assign(s, now, groups_, params_, next_group_id_);
  client_group_[client_id] = a.group_id;
  dispatched_at_[client_id] = now;
  return a.steps;
}

double CompassScheduler::population_samples() const {
  // Clients that have not reported yet count at the mean known size.
  double known = 0.0;
  for (const auto& [_, n] : samples_) known += static_cast<double>(n);
  const std::size_t registered = std::max(speeds_.size(), samples_.size());
  if (samples_.empty()) return known;
  const double mean = known / static_cast<double>(samples_.size());
  return known + mean * static_cast<double>(registered - samples_.size());
}

std::vector<SchedulerAction> CompassScheduler::reassign(std::vector<std::string> clients, double now) {
  // Fastest first: it founds the group and slower clients join with fewer steps.
  std::stable_sort(clients.begin(), clients.end(), [&](const std::string& a, const std::string& b) {
    return speeds_[a].per_step_time < speeds_[b].per_step_time;
  });
  std::vector<SchedulerAction> out;
  auto snapshot = std::make_shared<const ParameterSet>(aggregator_.global());
  for (const auto& c : clients) {
    const Assignment a = compass_assign(speeds_[c], now, groups_, params_, next_group_id_);
    client_group_[c] = a.group_id;
    dispatched_at_[c] = now;
    out.push_back(reply_to(c, a.steps, snapshot));
  }
  return out;
}

std::vector<SchedulerAction> CompassScheduler::close_group(GroupRecord& group, double now) {
  group.closed = true;
  auto updates = std::move(pending_[group.group_id]);
  pending_.erase(group.group_id);
  std::vector<std::string> ids;
  for (const auto& u : updates) ids.push_back(u.client_id);
  aggregator_.aggregate_group(updates, population_samples());
  std::vector<SchedulerAction> out{SchedulerAction::aggregate_of(ids)};
  for (auto& r : reassign(ids, now)) out.push_back(std::move(r));
  return out;
}

std::vector<SchedulerAction> CompassScheduler::on_update(ModelUpdate update, double now) {
  const std::string id = update.client_id;
  auto cg = client_group_.find(id);
  if (cg == client_group_.end()) fail(Errc::unknown_client, "client " + id + " never joined");
  GroupRecord* group = group_by_id(cg->second);
  if (group == nullptr) fail(Errc::internal, "client " + id + " mapped to a missing group");
  ++updates_received_;

  const double elapsed = now - dispatched_at_[id];
  speeds_[id].client_id = id;
  speeds_[id].observe(elapsed / std::max<std::uint32_t>(update.local_steps, 1), params_.ema_weight);
  samples_[id] = update.sample_count;

  if (group->closed) {
    // Straggler: its group already aggregated without it.
    aggregator_.aggregate_group(std::span<const ModelUpdate>(&update, 1), population_samples());
    std::vector<SchedulerAction> out{SchedulerAction::aggregate_of({id})};
    for (auto& r : reassign({id}, now)) out.push_back(std::move(r));
    prune();
    return out;
  }

  group->arrived.insert(id);
  pending_[group->group_id].push_back(std::move(update));
  const bool complete = group->arrived == group->members;
  const bool overdue = now >= group->deadline(params_.latitude);
  if (!complete && !overdue) return {SchedulerAction::buffered_from(id)};
  auto out = close_group(*group, now);
  prune();
  return out;
}

std::vector<SchedulerAction> CompassScheduler::on_tick(double now) {
  std::vector<SchedulerAction> out;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    GroupRecord& g = groups_[i];
    if (g.closed || g.arrived.empty() || now < g.deadline(params_.latitude)) continue;
    for (auto& a : close_group(g, now)) out.push_back(std::move(a));  // may append to groups_
  }
  prune();
  return out;
}

void CompassScheduler::prune() {
  std::set<std::int64_t> referenced;
  for (const auto& [_, gid] : client_group_) referenced.insert(gid);
  std::erase_if(groups_, [&](const GroupRecord& g) { return g.closed && !referenced.contains(g.group_id); });
}

std::optional<double> CompassScheduler::next_deadline() const {
  std::optional<double> best;
  for (const auto& g : groups_) {
    if (g.closed || g.arrived.empty()) continue;
    const double d = g.deadline(params_.latitude);
    if (std::isfinite(d) && (!best || d < *best)) best = d;
  }
  return best;
}

std::unique_ptr<Scheduler> make_scheduler(SchedulerKind kind, Aggregator& aggregator, int default_steps,
                                          std::size_t n_clients, CompassParams compass) {
  switch (kind) {
    case SchedulerKind::sync: return std::make_unique<SyncScheduler>(aggregator, default_steps, n_clients);
    case SchedulerKind::async: return std::make_unique<AsyncScheduler>(aggregator, default_steps);
    case SchedulerKind::compass: return std::make_unique<CompassScheduler>(aggregator, compass);
  }
  fail(Errc::internal, "unhandled scheduler kind");
}

}  // namespace apfl
