#include <filesystem>
#include <fstream>
#include <sstream>

#include "apfl/error.hpp"
#include "apfl/harness/config.hpp"
#include "apfl/harness/distributed.hpp"
#include "apfl/harness/experiment.hpp"
#include "apfl/harness/metrics.hpp"
#include "apfl/harness/simulator.hpp"
#include "doctest.h"
#include "loopback.hpp"
#include "support.hpp"

using namespace apfl;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = APFL_CONFIG_DIR;

template <class Fn>
Errc code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::ok;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("apfl_harness_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig from_text(const std::string& yaml) { return load_config_from_nodes(parse_yaml_string(yaml), {}); }

const std::string kSmallSync = R"(
server_configs:
  aggregator: FedAvgAggregator
  num_global_epochs: 3
  model: {hidden: [8], seed: 4}
client_configs:
  train_configs: {lr: 0.05, local_steps: 5, batch_size: 16, seed: 2}
  data_configs:
    dataset_name: blobs
    dataset_kwargs: {classes: 4, dim: 6, per_class: 40, seed: 9}
clients: {count: 2}
sim:
  mean_batch_time: [1.0, 2.0]
)";

double util_of(const SimResult& r, const std::string& client) {
  for (const auto& u : r.utilization.clients)
    if (u.client == client) return u.utilization;
  FAIL("no utilization row for " << client);
  return -1;
}

void check_time_conservation(const SimResult& r) {
  for (const auto& u : r.utilization.clients) {
    double compute = 0, idle = 0, last_end = 0;
    for (const auto& g : r.utilization.gantt) {
      if (g.client != u.client) continue;
      CHECK(g.start >= last_end);  // non-overlapping, in order
      last_end = g.end;
      (g.kind == "compute" ? compute : idle) += g.end - g.start;
    }
    CHECK(compute + idle == u.total_seconds);
    CHECK(u.utilization >= 0.0);
    CHECK(u.utilization <= 1.0);
  }
}

}  // namespace

TEST_CASE("server file shaped like the reference listing") {
  const auto cfg = load_config(kConfigs / "fedavg_server.yaml");
  CHECK(cfg.server.aggregator_name == "FedAvgAggregator");
  CHECK(cfg.server.aggregator == Strategy::fedavg);
  CHECK(cfg.server.scheduler == SchedulerKind::sync);
  CHECK(cfg.server.num_global_epochs == 10);
  REQUIRE(cfg.n_clients() == 2);
  CHECK(cfg.comm.port == 50051);
}

TEST_CASE("per-client file overrides one field and keeps the rest") {
  const auto cfg = load_config(kConfigs / "fedavg_server.yaml");
  CHECK(cfg.clients[0].train.lr == 0.05);
  CHECK(cfg.clients[1].train.lr == 0.02);
  CHECK(cfg.clients[1].train.local_steps == 20);
  CHECK(cfg.clients[1].train.batch_size == 32);
  CHECK(cfg.clients[0].data.index == 0);
  CHECK(cfg.clients[1].data.index == 1);
  CHECK(cfg.clients[1].data.partition.n_clients == 2);
}

TEST_CASE("config errors") {
  CHECK(code_of([] { from_text("server_configs: {aggregator: NoSuchAgg}\nclients: {count: 1}\n"); }) ==
        Errc::unknown_strategy_name);
  CHECK(code_of([] { from_text("server_configs: {aggregator: FedAvgAggregator, num_global_epoch: 3}\n"); }) ==
        Errc::unknown_key);
  CHECK(code_of([] {
          from_text("server_configs: {}\nclient_configs: {train_configs: {learning_rate: 1}}\nclients: {count: 1}\n");
        }) == Errc::unknown_key);
  CHECK(code_of([] { from_text("client_configs: {}\nclients: {count: 1}\n"); }) == Errc::missing_required);
  CHECK(code_of([] { from_text("server_configs: [1, 2\n"); }) == Errc::parse_error);
  CHECK(code_of([] { from_text("server_configs: {num_global_epochs: 0}\nclients: {count: 1}\n"); }) ==
        Errc::config_error);
  CHECK(code_of([] { from_text("server_configs: {num_global_epochs: abc}\nclients: {count: 1}\n"); }) ==
        Errc::parse_error);
  CHECK(code_of([] {
          from_text("server_configs: {aggregator: FedAsyncAggregator, scheduler: sync}\nclients: {count: 1}\n");
        }) == Errc::config_error);
}

TEST_CASE("unknown key error names the dotted path") {
  try {
    from_text("server_configs: {model: {hiden: [4]}}\nclients: {count: 1}\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unknown_key);
    CHECK(std::string(e.what()).find("server_configs.model.hiden") != std::string::npos);
  }
}

TEST_CASE("metrics export: header, line count, append, jsonl round trip") {
  const fs::path dir = scratch("metrics");
  export_metrics({}, MetricFormat::csv, dir / "empty.csv");
  CHECK(slurp(dir / "empty.csv") == "timestamp,entity,kind,value\n");

  const std::vector<MetricRecord> recs{
      {0.0, "server", "val_loss", 2.302585092994046},
      {1.5, "client,1", "val_accuracy", 0.1},
      {1e-300, "server", "x", -std::numeric_limits<double>::infinity()}};
  export_metrics(recs, MetricFormat::csv, dir / "m.csv");
  const std::string text = slurp(dir / "m.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(read_metrics_csv(dir / "m.csv") == recs);

  export_metrics(recs, MetricFormat::csv, dir / "m.csv", true);
  const auto twice = read_metrics_csv(dir / "m.csv");
  CHECK(twice.size() == 6);

  export_metrics(recs, MetricFormat::jsonl, dir / "m.jsonl");
  CHECK(read_metrics_jsonl(dir / "m.jsonl") == recs);

  CHECK(code_of([] { parse_metric_format("xml"); }) == Errc::config_error);
  CHECK(code_of([&] { export_metrics(recs, MetricFormat::csv, dir / "empty.csv" / "nested.csv"); }) ==
        Errc::io_error);
}

TEST_CASE("two-client sync: fast client idles half of every round") {
  const auto cfg = load_config(kConfigs / "sync_utilization.yaml");
  const auto r = run_simulation(cfg);
  CHECK(r.aggregations == 3);
  CHECK(r.end_time == 600.0);  // 3 rounds of 100 steps at 2 s
  CHECK(util_of(r, "client0") == 0.5);
  CHECK(util_of(r, "client1") == 1.0);
  check_time_conservation(r);

  // Same numbers recovered from the Gantt table alone.
  const fs::path dir = scratch("sync_util");
  write_gantt_csv(r.utilization.gantt, dir / "gantt.csv");
  const auto again = utilization_from_gantt(read_gantt_csv(dir / "gantt.csv"));
  REQUIRE(again.size() == 2);
  CHECK(again[0].utilization == 0.5);
  CHECK(again[1].utilization == 1.0);
}

TEST_CASE("vanilla async with zero latency never waits") {
  const auto cfg = load_config(kConfigs / "async_utilization.yaml");
  const auto r = run_simulation(cfg);
  CHECK(r.updates == 20);
  for (const auto& u : r.utilization.clients) CHECK(u.utilization == 1.0);
  check_time_conservation(r);
}

TEST_CASE("compass with a 2x speed ratio keeps both clients busy") {
  const auto cfg = load_config(kConfigs / "compass_utilization.yaml");
  const auto r = run_simulation(cfg);
  for (const auto& u : r.utilization.clients) {
    INFO(u.client << " " << u.utilization);
    CHECK(u.utilization >= 0.9);
  }
  check_time_conservation(r);
}

TEST_CASE("latency and bandwidth shift the clock") {
  auto cfg = from_text(kSmallSync + "  latency: 0.5\n  bandwidth: 1000.0\n");
  const auto r = run_simulation(cfg);
  // Each round: model down, 5 steps at 2 s for the slow client, update up.
  const double bytes = static_cast<double>(serialized_size(r.final_model));
  CHECK(r.end_time == doctest::Approx(3 * (10.0 + 2 * (0.5 + bytes / 1000.0))).epsilon(1e-12));
  check_time_conservation(r);
}

TEST_CASE("simulation is deterministic down to the bytes") {
  const auto cfg = from_text(kSmallSync + "  jitter: 0.2\n  seed: 3\n");
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  write_run_dir(a, cfg, run_simulation(cfg));
  write_run_dir(b, cfg, run_simulation(cfg));
  for (const char* f : {"metrics.csv", "metrics.jsonl", "utilization.csv", "gantt.csv", "final_model.apfm"}) {
    INFO(f);
    CHECK(!slurp(a / f).empty());
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(fs::exists(a / "config.yaml"));
  const auto snap = parse_yaml_file(a / "config.yaml");
  CHECK(snap["clients"].size() == 2);
}

TEST_CASE("event cap stops a runaway simulation") {
  auto cfg = from_text(kSmallSync + "  max_events: 5\n");
  CHECK(code_of([&] { run_simulation(cfg); }) == Errc::non_terminating);
}

TEST_CASE("simulated and socket runs agree for sync FedAvg") {
  const auto cfg = from_text(kSmallSync);
  const auto sim = run_simulation(cfg);
  const auto wire = testing::run_loopback(cfg);
  CHECK(wire.aggregations == sim.aggregations);
  CHECK(testing::max_abs_diff(sim.final_model, wire.final_model) <= 1e-9);
}

TEST_CASE("socket run with compression and auth matches the simulator") {
  const std::string extra = R"(
  comm_configs:
    compressor_configs: {lossy_compressor: qz, error_bound: 0.01, small_tensor_threshold: 16}
)";
  std::string text = kSmallSync;
  text.insert(text.find("  data_configs:"), extra.substr(1));
  text.replace(text.find("  num_global_epochs: 3"), 22,
               "  num_global_epochs: 3\n  comm: {auth: {enabled: true, tokens: {client0: s3cret-a, client1: s3cret-b}}}");
  const auto cfg = from_text(text);
  REQUIRE(cfg.clients[0].comm.compressor.enabled);
  const auto sim = run_simulation(cfg);
  const auto wire = testing::run_loopback(cfg);
  CHECK(testing::max_abs_diff(sim.final_model, wire.final_model) <= 1e-9);
}

TEST_CASE("wrong token is refused before the scheduler sees it") {
  const auto cfg = from_text(kSmallSync);
  auto text = kSmallSync;
  text.replace(text.find("  num_global_epochs: 3"), 22,
               "  num_global_epochs: 3\n  comm: {auth: {enabled: true, tokens: {client0: good0, client1: good1}}}");
  const auto auth_cfg = from_text(text);
  ServerRuntime runtime(auth_cfg);
  Dispatcher d([&](const Frame& f, const std::string& who) { return runtime.handle(f, who); },
               std::make_shared<StaticTokenAuthenticator>(auth_cfg.comm.tokens));
  TcpServer server({}, d);

  YAML::Node own;
  own["client_id"] = "client0";
  ClientRunOptions co;
  co.host = "127.0.0.1";
  co.port = server.port();
  co.token = "bad";
  CHECK(code_of([&] { run_client(own, co); }) == Errc::unauthenticated);
  CHECK(d.rejected() == 1);
  CHECK(d.dispatched() == 0);
  server.stop();
}

TEST_CASE("client gives up with ConnectionRefused when no server listens") {
  // Grab a free port and release it so nothing listens there.
  std::uint16_t port = 0;
  {
    Dispatcher d([](const Frame& f, const std::string&) { return f; }, std::make_shared<NoAuthenticator>());
    TcpServer s({}, d);
    port = s.port();
    s.stop();
  }
  YAML::Node own;
  own["client_id"] = "client0";
  ClientRunOptions co;
  co.host = "127.0.0.1";
  co.port = port;
  co.retry = RetryPolicy{3, std::chrono::milliseconds(10)};
  CHECK(code_of([&] { run_client(own, co); }) == Errc::connection_refused);
}

TEST_CASE("exponential batch times span the configured spread") {
  auto cfg = from_text(R"(
server_configs: {}
clients: {count: 5}
sim:
  batch_time: {distribution: exponential, base: 0.5, spread: 10.0}
  seed: 42
)");
  const auto t = client_batch_times(cfg);
  REQUIRE(t.size() == 5);
  CHECK(*std::min_element(t.begin(), t.end()) == doctest::Approx(0.5));
  CHECK(*std::max_element(t.begin(), t.end()) == doctest::Approx(5.0));
}

TEST_CASE("hierarchical, decentralized and vertical experiments run") {
  SUBCASE("hierarchical") {
    const auto cfg = from_text(R"(
server_configs: {num_global_epochs: 2, model: {hidden: [8]}}
client_configs:
  train_configs: {local_steps: 3}
  data_configs: {dataset_name: blobs, dataset_kwargs: {classes: 3, dim: 4, per_class: 30}}
clients: {count: 4}
topology:
  kind: hierarchical
  tree: {mid0: root, mid1: root, client0: mid0, client1: mid0, client2: mid1, client3: mid1}
)");
    const auto r = run_experiment(cfg);
    CHECK(r.aggregations == 2);
    CHECK(r.updates == 8);
  }
  SUBCASE("decentralized") {
    const auto cfg = from_text(R"(
server_configs: {num_global_epochs: 2, model: {hidden: [8]}}
client_configs:
  train_configs: {local_steps: 3}
  data_configs: {dataset_name: blobs, dataset_kwargs: {classes: 3, dim: 4, per_class: 30}}
clients: {count: 4}
topology:
  kind: decentralized
  graph: {kind: circulant, degree: 2}
)");
    const auto r = run_experiment(cfg);
    CHECK(r.aggregations == 2);
    bool per_node = false;
    for (const auto& m : r.records) per_node |= m.entity == "client3";
    CHECK(per_node);
  }
  SUBCASE("vertical") {
    const auto cfg = from_text(R"(
server_configs: {num_global_epochs: 5}
client_configs:
  train_configs: {optimizer: adam, lr: 0.01}
  data_configs: {dataset_name: diabetes}
clients: {count: 3}
topology:
  kind: vertical
  feature_split: [[0, 1, 2], [3, 4, 5], [6, 7, 8, 9]]
)");
    const auto r = run_experiment(cfg);
    CHECK(r.aggregations == 5);
    CHECK(r.utilization.clients.empty());
  }
}
