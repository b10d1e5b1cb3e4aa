#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "apfl/apfl.h"

namespace {

int report(int status, const char* what) {
  if (status != APFL_OK) std::fprintf(stderr, "%s failed: %s\n", what, apfl_last_error());
  return status;
}

struct ExperimentHandle {
  apfl_experiment* p = nullptr;
  ~ExperimentHandle() { apfl_experiment_free(p); }
};

struct ResultHandle {
  apfl_result* p = nullptr;
  ~ResultHandle() { apfl_result_free(p); }
};

int load(const std::string& server, const std::vector<std::string>& clients, ExperimentHandle& out) {
  std::vector<const char*> c;
  for (const auto& s : clients) c.push_back(s.c_str());
  return report(apfl_experiment_load(server.c_str(), c.data(), c.size(), &out.p), "loading the configuration");
}

std::string default_run_dir(const std::string& config) {
  return (std::filesystem::path("runs") / std::filesystem::path(config).stem()).string();
}

void print_summary(const apfl_result* r) {
  std::printf("aggregations %lld, updates %llu, end time %.6g\n", static_cast<long long>(apfl_result_aggregations(r)),
              static_cast<unsigned long long>(apfl_result_updates(r)), apfl_result_end_time(r));
  for (const char* kind : {"val_accuracy", "val_mse", "val_loss"}) {
    double v = 0;
    if (apfl_result_last_server_metric(r, kind, &v) == APFL_OK) std::printf("final %s %.6g\n", kind, v);
  }
  for (size_t i = 0; i < apfl_result_client_count(r); ++i) {
    const char* id = nullptr;
    double compute = 0, total = 0, util = 0;
    apfl_result_utilization(r, i, &id, &compute, &total, &util);
    std::printf("%s utilization %.4f (%.6g of %.6g s)\n", id, util, compute, total);
  }
}

std::vector<uint64_t> parse_sizes(const std::string& text) {
  std::vector<uint64_t> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) {
      if (const uint64_t n = apfl_reference_model_params(item.c_str()); n > 0)
        out.push_back(n);
      else
        out.push_back(std::stoull(item));
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning experiments: simulate, run over TCP, benchmark."};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")->capture_default_str();

  std::string config, out_dir, role = "server", host;
  std::vector<std::string> client_files;
  int port = -1;

  auto* simulate = app.add_subcommand("simulate", "Run an experiment on the virtual clock");
  simulate->add_option("--config", config, "Server YAML")->required()->check(CLI::ExistingFile);
  simulate->add_option("--client", client_files, "Per-client YAML (repeatable)")->check(CLI::ExistingFile);
  simulate->add_option("--out", out_dir, "Run directory (default: output_dir, else runs/<config name>)");

  auto* run = app.add_subcommand("run", "Run one side of a real deployment over TCP");
  run->add_option("--role", role, "server or client")->check(CLI::IsMember({"server", "client"}))->capture_default_str();
  run->add_option("--config", config, "Server YAML (server role) or client YAML (client role)")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--client", client_files, "Per-client YAML known to the server (repeatable)")
      ->check(CLI::ExistingFile);
  run->add_option("--host", host, "Server host (client role)");
  run->add_option("--port", port, "Port to bind (server) or reach (client)");
  run->add_option("--out", out_dir, "Run directory for the server's results");

  std::string sizes = "fc1x1,cnn,resnet18", transports = "inproc,tcp", csv;
  int trials = 10;
  uint64_t inline_limit = 0;
  auto* bench_comm = app.add_subcommand("bench-comm", "Round-trip time per payload size and transport");
  bench_comm->add_option("--sizes", sizes, "Parameter counts or reference model names, comma separated")
      ->capture_default_str();
  bench_comm->add_option("--transports", transports, "inproc,tcp")->capture_default_str();
  bench_comm->add_option("--trials", trials, "Trials per cell (>= 10 for reporting)")->capture_default_str();
  bench_comm->add_option("--inline-limit", inline_limit, "Bytes sent inline before switching to a reference");
  bench_comm->add_option("--out", csv, "CSV path")->required();

  std::string models = "all", codecs = "qz,deflate";
  uint64_t seed = 0;
  auto* bench_compress = app.add_subcommand("bench-compress", "Compression ratio and speed on reference-sized models");
  bench_compress->add_option("--models", models, "Reference model names or all")->capture_default_str();
  bench_compress->add_option("--codecs", codecs, "qz[:eb], deflate, rle, none")->capture_default_str();
  bench_compress->add_option("--seed", seed, "Weight seed")->capture_default_str();
  bench_compress->add_option("--out", csv, "CSV path")->required();

  std::string run_dir;
  auto* report_util = app.add_subcommand("report-utilization", "Utilization table from a run's Gantt CSV");
  report_util->add_option("run_dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  auto* validate = app.add_subcommand("validate-config", "Parse, validate and print the resolved configuration");
  validate->add_option("--config", config, "Server YAML")->required()->check(CLI::ExistingFile);
  validate->add_option("--client", client_files, "Per-client YAML (repeatable)")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  if (report(apfl_set_log_level(log_level.c_str()), "setting the log level")) return 2;

  if (*validate) {
    ExperimentHandle exp;
    if (int s = load(config, client_files, exp)) return s;
    size_t needed = 0;
    apfl_experiment_describe(exp.p, nullptr, 0, &needed);
    std::string text(needed, '\0');
    apfl_experiment_describe(exp.p, text.data(), text.size(), nullptr);
    text.resize(needed - 1);
    std::printf("%s\n# ok: %zu clients\n", text.c_str(), apfl_experiment_client_count(exp.p));
    return 0;
  }

  if (*simulate) {
    ExperimentHandle exp;
    if (int s = load(config, client_files, exp)) return s;
    ResultHandle res;
    if (int s = report(apfl_simulate(exp.p, &res.p), "simulation")) return s;
    if (out_dir.empty()) out_dir = default_run_dir(config);
    if (int s = report(apfl_result_write_run_dir(exp.p, res.p, out_dir.c_str()), "writing the run directory")) return s;
    print_summary(res.p);
    std::printf("results in %s\n", out_dir.c_str());
    return 0;
  }

  if (*run) {
    if (role == "client") {
      int rounds = 0;
      if (int s = report(apfl_run_client(config.c_str(), host.empty() ? nullptr : host.c_str(), port, nullptr, &rounds),
                         "client"))
        return s;
      std::printf("client finished after %d rounds\n", rounds);
      return 0;
    }
    ExperimentHandle exp;
    if (int s = load(config, client_files, exp)) return s;
    ResultHandle res;
    if (int s = report(apfl_run_server(exp.p, port, &res.p), "server")) return s;
    if (!out_dir.empty() &&
        report(apfl_result_write_run_dir(exp.p, res.p, out_dir.c_str()), "writing the run directory"))
      return 1;
    print_summary(res.p);
    return 0;
  }

  if (*bench_comm) {
    std::vector<uint64_t> counts;
    try {
      counts = parse_sizes(sizes);
    } catch (const std::exception&) {
      std::fprintf(stderr, "bad --sizes '%s'\n", sizes.c_str());
      return 2;
    }
    if (int s = report(apfl_bench_comm(counts.data(), counts.size(), transports.c_str(), trials, inline_limit,
                                       csv.c_str()),
                       "bench-comm"))
      return s;
    std::printf("wrote %s\n", csv.c_str());
    return 0;
  }

  if (*bench_compress) {
    if (int s = report(apfl_bench_compress(models.c_str(), codecs.c_str(), seed, csv.c_str()), "bench-compress"))
      return s;
    std::printf("wrote %s\n", csv.c_str());
    return 0;
  }

  if (*report_util) {
    size_t n = 0;
    if (int s = report(apfl_report_utilization(run_dir.c_str(), &n), "report-utilization")) return s;
    std::printf("%zu clients; wrote %s/utilization_report.csv\n", n, run_dir.c_str());
    return 0;
  }
  return 0;
}
