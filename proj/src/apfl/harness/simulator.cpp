#include "apfl/harness/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <queue>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

#include "apfl/error.hpp"
#include "apfl/harness/experiment.hpp"
#include "apfl/topology/topology.hpp"

namespace apfl {

namespace {

enum class EventKind { finish = 0, arrive_server = 1, arrive_client = 1, deadline = 2 };

struct Payload {
  ModelUpdate update;                           // client -> server
  std::shared_ptr<const ParameterSet> global;   // server -> client
  std::int64_t epoch = 0;
  int steps = 0;
  std::size_t bytes = 0;
};

struct Event {
  double time = 0.0;
  int rank = 0;
  std::string subject;
  std::uint64_t seq = 0;
  bool to_client = false;
  std::shared_ptr<Payload> payload;
};

struct Later {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time != b.time) return a.time > b.time;
    if (a.rank != b.rank) return a.rank > b.rank;
    if (a.subject != b.subject) return a.subject > b.subject;
    return a.seq > b.seq;
  }
};

UtilizationReport build_utilization(const std::vector<ClientConfig>& clients,
                                    const std::map<std::string, std::vector<std::pair<double, double>>>& busy,
                                    double end) {
  UtilizationReport rep;
  for (const auto& c : clients) {
    std::vector<std::pair<double, double>> spans;
    if (auto it = busy.find(c.id); it != busy.end()) {
      for (auto [s, e] : it->second) {
        e = std::min(e, end);
        if (e <= s) continue;
        if (!spans.empty() && spans.back().second == s)
          spans.back().second = e;
        else
          spans.emplace_back(s, e);
      }
    }
    double t = 0.0, compute = 0.0;
    for (const auto& [s, e] : spans) {
      if (s > t) rep.gantt.push_back({c.id, t, s, "idle"});
      rep.gantt.push_back({c.id, s, e, "compute"});
      compute += e - s;
      t = e;
    }
    if (t < end) rep.gantt.push_back({c.id, t, end, "idle"});
    rep.clients.push_back({c.id, compute, end, end > 0 ? compute / end : 0.0});
  }
  return rep;
}

void add_eval(std::vector<MetricRecord>& out, const ParameterSet& global, const Dataset& val, const ModelSpec& spec,
              double now, std::int64_t epoch) {
  for (auto& r : evaluate(global, val, spec, "server", now)) out.push_back(std::move(r));
  out.push_back({now, "server", "epoch", static_cast<double>(epoch)});
}

ModelUpdate package(ClientAgent& agent, const ClientConfig& c, const ParameterSet& base, std::int64_t epoch,
                    int steps, std::size_t& bytes) {
  ModelUpdate u = agent.apply_privacy_then_package(agent.local_train(base, epoch, steps), &base);
  if (c.comm.compressor.enabled) {
    auto blob = compress_params(u.params, c.comm.compressor.codec);
    bytes = blob.bytes.size();
    u.params = decompress_params(blob);
  } else {
    bytes = serialized_size(u.params);
  }
  return u;
}

}  // namespace

SimResult run_simulation(const ExperimentConfig& cfg) {
  if (cfg.topology.kind != TopologyKind::star) fail(Errc::config_error, "the event simulator runs star topologies");
  const std::size_t n = cfg.n_clients();
  if (n == 0) fail(Errc::config_error, "no clients configured");
  if (cfg.server.num_global_epochs < 1) fail(Errc::config_error, "num_global_epochs must be >= 1");

  const Dataset val = validation_dataset(cfg);
  std::vector<std::unique_ptr<ClientAgent>> agents;
  std::map<std::string, std::size_t> index_of;
  ModelSpec spec;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = cfg.clients[i];
    if (i == 0) spec = resolve_model(cfg.server.model, client_dataset(c.data));
    agents.push_back(make_client_agent(c, spec));
    index_of[c.id] = i;
  }
  const std::vector<double> batch_time = client_batch_times(cfg);
  if (batch_time.size() != n)
    fail(Errc::config_error, "sim.mean_batch_time lists " + std::to_string(batch_time.size()) + " values for " +
                                 std::to_string(n) + " clients");
  for (double t : batch_time)
    if (!(t > 0.0) || !std::isfinite(t)) fail(Errc::config_error, "mean batch times must be positive and finite");

  auto aggregator =
      make_aggregator(cfg.server.aggregator, init_params(spec, cfg.server.model.seed, cfg.server.model.dtype),
                      cfg.server.hyper);
  auto scheduler = make_scheduler(cfg.server.scheduler, *aggregator, default_local_steps(cfg), n, cfg.server.compass);

  const auto& sim = cfg.sim;
  std::mt19937_64 jitter_rng(sim.seed);
  std::uniform_real_distribution<double> jitter(1.0 - sim.jitter, 1.0 + sim.jitter);
  auto transit = [&](std::size_t bytes) {
    return sim.latency + (std::isfinite(sim.bandwidth) ? static_cast<double>(bytes) / sim.bandwidth : 0.0);
  };

  SimResult res;
  std::priority_queue<Event, std::vector<Event>, Later> queue;
  std::uint64_t seq = 0;
  auto push = [&](double time, EventKind kind, const std::string& subject, bool to_client,
                  std::shared_ptr<Payload> p) {
    queue.push({time, static_cast<int>(kind), subject, seq++, to_client, std::move(p)});
  };

  const bool sync = cfg.server.scheduler == SchedulerKind::sync;
  const std::uint64_t update_budget = static_cast<std::uint64_t>(cfg.server.num_global_epochs) * n;
  bool done = false;
  double now = 0.0;
  std::int64_t last_epoch = aggregator->epoch();
  std::set<double> deadlines;
  std::map<std::string, std::vector<std::pair<double, double>>> busy;

  add_eval(res.records, aggregator->global(), val, spec, 0.0, last_epoch);

  auto send_model = [&](const std::string& client, std::shared_ptr<const ParameterSet> global, std::int64_t epoch,
                        int steps) {
    auto p = std::make_shared<Payload>();
    p->bytes = serialized_size(*global);
    p->global = std::move(global);
    p->epoch = epoch;
    p->steps = steps;
    const double at = now + transit(p->bytes);
    push(at, EventKind::arrive_client, client, true, std::move(p));
  };

  auto check_done = [&] {
    if (sync)
      done = res.aggregations >= cfg.server.num_global_epochs;
    else
      done = scheduler->updates_received() >= update_budget;
  };

  auto process = [&](std::vector<SchedulerAction> actions) {
    for (auto& a : actions) {
      if (a.kind == SchedulerAction::Kind::aggregate) {
        if (aggregator->epoch() != last_epoch) {
          last_epoch = aggregator->epoch();
          ++res.aggregations;
          add_eval(res.records, aggregator->global(), val, spec, now, last_epoch);
        }
        check_done();
      } else if (a.kind == SchedulerAction::Kind::reply && !done) {
        send_model(a.client_id, a.global, a.epoch, a.next_steps);
      }
    }
    check_done();
    if (done) return;
    if (auto d = scheduler->next_deadline(); d && *d >= now && !deadlines.contains(*d)) {
      deadlines.insert(*d);
      push(*d, EventKind::deadline, "", false, nullptr);
    }
  };

  auto initial = std::make_shared<const ParameterSet>(aggregator->global());
  for (const auto& c : cfg.clients) send_model(c.id, initial, aggregator->epoch(), scheduler->on_join(c.id, 0.0));

  while (!done) {
    if (queue.empty()) fail(Errc::non_terminating, "event queue drained before the stopping rule was met");
    if (++res.events > sim.max_events)
      fail(Errc::non_terminating, "exceeded " + std::to_string(sim.max_events) + " events");
    Event ev = queue.top();
    queue.pop();
    now = ev.time;

    if (ev.rank == static_cast<int>(EventKind::deadline)) {
      deadlines.erase(now);
      process(scheduler->on_tick(now));
    } else if (ev.rank == static_cast<int>(EventKind::finish)) {
      push(now + transit(ev.payload->bytes), EventKind::arrive_server, ev.subject, false, ev.payload);
    } else if (ev.to_client) {
      const std::size_t i = index_of.at(ev.subject);
      auto p = std::make_shared<Payload>();
      p->update = package(*agents[i], cfg.clients[i], *ev.payload->global, ev.payload->epoch, ev.payload->steps,
                          p->bytes);
      const double factor = sim.jitter > 0.0 ? jitter(jitter_rng) : 1.0;
      const double duration = ev.payload->steps * batch_time[i] * factor;
      busy[ev.subject].emplace_back(now, now + duration);
      push(now + duration, EventKind::finish, ev.subject, false, std::move(p));
    } else {
      process(scheduler->on_update(std::move(ev.payload->update), now));
    }
  }

  res.end_time = now;
  res.updates = scheduler->updates_received();

  // Leftovers: FedBuff's partial buffer, Compass groups still waiting on members.
  bool changed = aggregator->flush();
  if (scheduler->kind() == SchedulerKind::compass) {
    for (const auto& a : scheduler->on_tick(std::numeric_limits<double>::infinity()))
      if (a.kind == SchedulerAction::Kind::aggregate) changed = true;
  }
  if (changed && aggregator->epoch() != last_epoch) {
    ++res.aggregations;
    add_eval(res.records, aggregator->global(), val, spec, now, aggregator->epoch());
  }

  res.utilization = build_utilization(cfg.clients, busy, res.end_time);
  for (const auto& u : res.utilization.clients) {
    res.records.push_back({res.end_time, u.client, "compute_seconds", u.compute_seconds});
    res.records.push_back({res.end_time, u.client, "utilization", u.utilization});
  }
  res.final_model = aggregator->global();
  spdlog::info("simulation done: {} aggregations, {} updates, {} events, t={}", res.aggregations, res.updates,
               res.events, res.end_time);
  return res;
}

namespace {

SimResult run_hierarchical(const ExperimentConfig& cfg) {
  const auto tree = TreeTopology::from_parents(cfg.topology.tree);
  const auto leaves = tree.leaves();
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < cfg.clients.size(); ++i) index_of[cfg.clients[i].id] = i;
  for (const auto& l : leaves)
    if (!index_of.contains(l)) fail(Errc::config_error, "tree leaf '" + l + "' is not a configured client");
  if (leaves.size() != cfg.clients.size()) fail(Errc::config_error, "every client must be a leaf of the tree");

  const Dataset val = validation_dataset(cfg);
  const ModelSpec spec = resolve_model(cfg.server.model, client_dataset(cfg.clients.front().data));
  std::vector<std::unique_ptr<ClientAgent>> agents;
  for (const auto& c : cfg.clients) agents.push_back(make_client_agent(c, spec));
  AggregatorState state(init_params(spec, cfg.server.model.seed, cfg.server.model.dtype), cfg.server.hyper);

  SimResult res;
  add_eval(res.records, state.global, val, spec, 0.0, state.epoch);
  for (int r = 1; r <= cfg.server.num_global_epochs; ++r) {
    std::vector<ModelUpdate> updates;
    for (std::size_t i = 0; i < agents.size(); ++i) {
      std::size_t bytes = 0;
      updates.push_back(
          package(*agents[i], cfg.clients[i], state.global, state.epoch, cfg.clients[i].train.local_steps, bytes));
    }
    hier_round(tree, state, updates);
    res.updates += updates.size();
    ++res.aggregations;
    add_eval(res.records, state.global, val, spec, r, state.epoch);
  }
  res.end_time = cfg.server.num_global_epochs;
  res.final_model = state.global;
  return res;
}

SimResult run_decentralized(const ExperimentConfig& cfg) {
  const std::size_t n = cfg.n_clients();
  NeighborGraph graph(n, cfg.topology.edges);
  if (!graph.connected()) spdlog::warn("neighbor graph is disconnected; components will not reach consensus");

  const Dataset val = validation_dataset(cfg);
  const ModelSpec spec = resolve_model(cfg.server.model, client_dataset(cfg.clients.front().data));
  std::vector<std::unique_ptr<ClientAgent>> agents;
  for (const auto& c : cfg.clients) agents.push_back(make_client_agent(c, spec));
  std::vector<ParameterSet> models(n, init_params(spec, cfg.server.model.seed, cfg.server.model.dtype));

  auto consensus = [&] {
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    return weighted_sum(std::span<const ParameterSet>(models), w);
  };
  SimResult res;
  auto eval_all = [&](double t, std::int64_t round) {
    for (std::size_t i = 0; i < n; ++i)
      for (auto& m : evaluate(models[i], val, spec, cfg.clients[i].id, t)) res.records.push_back(std::move(m));
    add_eval(res.records, consensus(), val, spec, t, round);
  };
  eval_all(0.0, 0);
  for (int r = 1; r <= cfg.server.num_global_epochs; ++r) {
    std::vector<ParameterSet> trained;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t bytes = 0;
      ModelUpdate u = package(*agents[i], cfg.clients[i], models[i], r - 1, cfg.clients[i].train.local_steps, bytes);
      trained.push_back(u.is_delta ? axpy(1.0, u.params, models[i]) : std::move(u.params));
    }
    models = dfl_round(graph, trained).models;
    res.updates += n;
    ++res.aggregations;
    eval_all(r, r);
  }
  res.end_time = cfg.server.num_global_epochs;
  res.final_model = consensus();
  return res;
}

SimResult run_vertical(const ExperimentConfig& cfg) {
  const auto& split_cols = cfg.topology.feature_split;
  if (split_cols.empty()) fail(Errc::config_error, "vertical topology needs topology.feature_split");
  const DatasetSpec& ds = cfg.server.validation ? *cfg.server.validation : cfg.clients.front().data.dataset;
  const TrainValSplit data = split_named_dataset(ds);
  VflConfig vcfg = default_vfl_config(split_cols, cfg.topology.vfl_hidden, cfg.topology.vfl_embedding);

  const TrainConfig& t = cfg.clients.front().train;
  VflTrainConfig tc;
  tc.epochs = cfg.server.num_global_epochs;
  tc.lr = t.lr;
  tc.batch_size = cfg.topology.vfl_batch_size;
  tc.optimizer = t.optimizer;
  tc.seed = t.seed;
  tc.dtype = cfg.server.model.dtype;
  VflTrainer trainer(std::move(vcfg), data.train, data.val, tc);

  SimResult res;
  res.records = trainer.run();
  res.records.push_back({static_cast<double>(tc.epochs), "server", "baseline_mse", trainer.baseline_mse()});
  res.aggregations = tc.epochs;
  res.end_time = tc.epochs;
  res.final_model = trainer.head_params();
  return res;
}

}  // namespace

SimResult run_round_experiment(const ExperimentConfig& cfg) {
  if (cfg.clients.empty()) fail(Errc::config_error, "no clients configured");
  switch (cfg.topology.kind) {
    case TopologyKind::hierarchical: return run_hierarchical(cfg);
    case TopologyKind::decentralized: return run_decentralized(cfg);
    case TopologyKind::vertical: return run_vertical(cfg);
    case TopologyKind::star: break;
  }
  fail(Errc::config_error, "star topologies run on the event simulator");
}

SimResult run_experiment(const ExperimentConfig& cfg) {
  return cfg.topology.kind == TopologyKind::star ? run_simulation(cfg) : run_round_experiment(cfg);
}

void write_run_dir(const std::filesystem::path& dir, const ExperimentConfig& cfg, const SimResult& result) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "config.yaml");
    if (!out) fail(Errc::io_error, "cannot write " + (dir / "config.yaml").string());
    out << to_yaml_string(cfg.snapshot) << '\n';
  }
  export_metrics(result.records, MetricFormat::csv, dir / "metrics.csv");
  export_metrics(result.records, MetricFormat::jsonl, dir / "metrics.jsonl");
  if (!result.utilization.clients.empty()) {
    write_utilization_csv(result.utilization.clients, dir / "utilization.csv");
    write_gantt_csv(result.utilization.gantt, dir / "gantt.csv");
  }
  save_checkpoint(dir / "final_model.apfm", result.final_model);
}

}  // namespace apfl
