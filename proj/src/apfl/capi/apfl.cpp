#include "apfl/apfl.h"

#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "apfl/error.hpp"
#include "apfl/harness/bench.hpp"
#include "apfl/harness/config.hpp"
#include "apfl/harness/distributed.hpp"
#include "apfl/harness/simulator.hpp"

struct apfl_experiment {
  apfl::ExperimentConfig cfg;
};

struct apfl_result {
  apfl::SimResult res;
};

namespace {

thread_local std::string g_last_error;

template <class Fn>
int guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return APFL_OK;
  } catch (const apfl::Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return APFL_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return APFL_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) apfl::fail(apfl::Errc::invalid_argument, std::string(what) + " must not be NULL");
}

std::vector<std::string> split_list(const char* text) {
  std::vector<std::string> out;
  std::stringstream ss(text ? text : "");
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

extern "C" {

const char* apfl_version(void) { return "0.1.0"; }

const char* apfl_last_error(void) { return g_last_error.c_str(); }

const char* apfl_status_name(int status) {
  // errc_name returns views of string literals.
  return apfl::errc_name(static_cast<apfl::Errc>(status)).data();
}

int apfl_set_log_level(const char* level) {
  return guarded([&] {
    need(level, "level");
    const auto l = spdlog::level::from_str(level);
    if (l == spdlog::level::off && std::string(level) != "off")
      apfl::fail(apfl::Errc::invalid_argument, std::string("unknown log level '") + level + "'");
    spdlog::set_level(l);
  });
}

int apfl_experiment_load(const char* server_yaml, const char* const* client_yamls, size_t n, apfl_experiment** out) {
  return guarded([&] {
    need(server_yaml, "server_yaml");
    need(out, "out");
    *out = nullptr;
    std::vector<std::filesystem::path> clients;
    if (n > 0) need(client_yamls, "client_yamls");
    for (size_t i = 0; i < n; ++i) {
      need(client_yamls[i], "client_yamls[i]");
      clients.emplace_back(client_yamls[i]);
    }
    *out = new apfl_experiment{apfl::load_config(server_yaml, clients)};
  });
}

void apfl_experiment_free(apfl_experiment* exp) { delete exp; }

size_t apfl_experiment_client_count(const apfl_experiment* exp) { return exp ? exp->cfg.n_clients() : 0; }

int apfl_experiment_describe(const apfl_experiment* exp, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(exp, "exp");
    const std::string text = apfl::to_yaml_string(exp->cfg.snapshot);
    if (needed) *needed = text.size() + 1;
    if (buf && cap > 0) {
      const size_t n = std::min(cap - 1, text.size());
      text.copy(buf, n);
      buf[n] = '\0';
    }
  });
}

int apfl_simulate(const apfl_experiment* exp, apfl_result** out) {
  return guarded([&] {
    need(exp, "exp");
    need(out, "out");
    *out = nullptr;
    *out = new apfl_result{apfl::run_experiment(exp->cfg)};
  });
}

int apfl_run_server(const apfl_experiment* exp, int port, apfl_result** out) {
  return guarded([&] {
    need(exp, "exp");
    if (port > 65535) apfl::fail(apfl::Errc::invalid_argument, "port out of range");
    apfl::ServerRunOptions opts;
    if (port >= 0) opts.port = static_cast<std::uint16_t>(port);
    auto res = apfl::run_server(exp->cfg, opts);
    if (out) *out = new apfl_result{std::move(res)};
  });
}

int apfl_run_client(const char* client_yaml, const char* host, int port, const char* token, int* rounds) {
  return guarded([&] {
    need(client_yaml, "client_yaml");
    if (port > 65535) apfl::fail(apfl::Errc::invalid_argument, "port out of range");
    apfl::ClientRunOptions opts;
    if (host) opts.host = host;
    if (port >= 0) opts.port = static_cast<std::uint16_t>(port);
    if (token) opts.token = token;
    const auto r = apfl::run_client(apfl::parse_yaml_file(client_yaml), opts);
    if (rounds) *rounds = r.rounds;
  });
}

void apfl_result_free(apfl_result* res) { delete res; }

int apfl_result_write_run_dir(const apfl_experiment* exp, const apfl_result* res, const char* dir) {
  return guarded([&] {
    need(exp, "exp");
    need(res, "res");
    need(dir, "dir");
    apfl::write_run_dir(dir, exp->cfg, res->res);
  });
}

size_t apfl_result_record_count(const apfl_result* res) { return res ? res->res.records.size() : 0; }

int apfl_result_record(const apfl_result* res, size_t i, double* timestamp, const char** entity, const char** kind,
                       double* value) {
  return guarded([&] {
    need(res, "res");
    if (i >= res->res.records.size()) apfl::fail(apfl::Errc::invalid_argument, "record index out of range");
    const auto& r = res->res.records[i];
    if (timestamp) *timestamp = r.timestamp;
    if (entity) *entity = r.entity.c_str();
    if (kind) *kind = r.kind.c_str();
    if (value) *value = r.value;
  });
}

int apfl_result_last_server_metric(const apfl_result* res, const char* kind, double* value) {
  return guarded([&] {
    need(res, "res");
    need(kind, "kind");
    need(value, "value");
    const auto& recs = res->res.records;
    for (auto it = recs.rbegin(); it != recs.rend(); ++it)
      if (it->entity == "server" && it->kind == kind) {
        *value = it->value;
        return;
      }
    apfl::fail(apfl::Errc::missing_key, std::string("no server record of kind '") + kind + "'");
  });
}

double apfl_result_end_time(const apfl_result* res) { return res ? res->res.end_time : 0.0; }
int64_t apfl_result_aggregations(const apfl_result* res) { return res ? res->res.aggregations : 0; }
uint64_t apfl_result_updates(const apfl_result* res) { return res ? res->res.updates : 0; }
size_t apfl_result_client_count(const apfl_result* res) { return res ? res->res.utilization.clients.size() : 0; }

int apfl_result_utilization(const apfl_result* res, size_t i, const char** client, double* compute_seconds,
                            double* total_seconds, double* utilization) {
  return guarded([&] {
    need(res, "res");
    const auto& rows = res->res.utilization.clients;
    if (i >= rows.size()) apfl::fail(apfl::Errc::invalid_argument, "client index out of range");
    if (client) *client = rows[i].client.c_str();
    if (compute_seconds) *compute_seconds = rows[i].compute_seconds;
    if (total_seconds) *total_seconds = rows[i].total_seconds;
    if (utilization) *utilization = rows[i].utilization;
  });
}

int apfl_result_save_model(const apfl_result* res, const char* path) {
  return guarded([&] {
    need(res, "res");
    need(path, "path");
    apfl::save_checkpoint(path, res->res.final_model);
  });
}

int apfl_bench_comm(const uint64_t* sizes, size_t n_sizes, const char* transports, int trials, uint64_t inline_limit,
                    const char* out_csv) {
  return guarded([&] {
    need(sizes, "sizes");
    need(out_csv, "out_csv");
    apfl::BenchCommOptions opts;
    opts.sizes.assign(sizes, sizes + n_sizes);
    if (transports) opts.transports = split_list(transports);
    opts.trials = trials;
    if (inline_limit > 0) opts.inline_limit = static_cast<std::size_t>(inline_limit);
    apfl::write_bench_comm_csv(apfl::bench_comm(opts), out_csv);
  });
}

int apfl_bench_compress(const char* models, const char* codecs, uint64_t seed, const char* out_csv) {
  return guarded([&] {
    need(out_csv, "out_csv");
    std::vector<apfl::SizeModel> ms;
    if (models == nullptr || std::string(models) == "all")
      ms = apfl::reference_models();
    else
      for (const auto& name : split_list(models)) ms.push_back(apfl::reference_model(name));
    std::vector<apfl::NamedCodec> cs;
    for (const auto& c : split_list(codecs ? codecs : "qz")) cs.push_back(apfl::parse_named_codec(c));
    apfl::write_bench_compress_csv(apfl::bench_compress(ms, cs, seed), out_csv);
  });
}

uint64_t apfl_reference_model_params(const char* name) {
  if (name == nullptr) return 0;
  for (const auto& m : apfl::reference_models())
    if (m.name == name) return m.params;
  return 0;
}

int apfl_report_utilization(const char* run_dir, size_t* n_clients) {
  return guarded([&] {
    need(run_dir, "run_dir");
    const auto rows = apfl::report_utilization(run_dir);
    if (n_clients) *n_clients = rows.size();
  });
}

}  // extern "C"
