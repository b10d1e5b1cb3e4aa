#include "apfl/harness/distributed.hpp"

#include <cstdlib>
#include <limits>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "apfl/error.hpp"
#include "apfl/harness/experiment.hpp"

namespace apfl {

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    try {
      out.push_back(std::stoi(item));
    } catch (const std::logic_error&) {
      fail(Errc::protocol_error, "bad integer list '" + s + "'");
    }
  return out;
}

std::int64_t meta_int(const Envelope& env, const std::string& key) {
  try {
    return std::stoll(env.get(key));
  } catch (const std::logic_error&) {
    fail(Errc::protocol_error, "meta '" + key + "' is not an integer");
  }
}

Bytes encode_params(const ParameterSet& p, const CompressorConfig& comp, std::map<std::string, std::string>& meta) {
  if (comp.enabled) {
    meta["encoding"] = "apfz";
    return compress_params(p, comp.codec).bytes;
  }
  meta["encoding"] = "raw";
  return serialize_params(p);
}

ParameterSet decode_params(const Envelope& env, const ConnectorRegistry& registry, DataConnector* owned) {
  const Bytes body = resolve_body(env, registry);
  if (owned != nullptr && !env.is_inline()) owned->remove(std::get<DataRef>(env.body));
  const auto enc = env.get_or("encoding", "raw");
  if (enc == "apfz") return decompress_params(body);
  if (enc == "raw") return deserialize_params(body);
  fail(Errc::protocol_error, "unknown parameter encoding '" + enc + "'");
}

Frame make_frame(MessageType type, const std::string& token, const Envelope& env) {
  return Frame{type, token, encode_envelope(env)};
}

std::shared_ptr<DataConnector> connector_for(const ClientCommConfig& comm) {
  if (comm.connector == "filesystem") return std::make_shared<FilesystemConnector>(comm.connector_root);
  return nullptr;
}

}  // namespace

ServerRuntime::ServerRuntime(const ExperimentConfig& cfg, std::shared_ptr<DataConnector> connector)
    : cfg_(cfg), connector_(std::move(connector)), start_(std::chrono::steady_clock::now()) {
  if (cfg.topology.kind != TopologyKind::star) fail(Errc::config_error, "distributed runs use the star topology");
  if (cfg.clients.empty()) fail(Errc::config_error, "no clients configured");
  val_ = validation_dataset(cfg);
  spec_ = resolve_model(cfg.server.model, client_dataset(cfg.clients.front().data));
  aggregator_ = make_aggregator(cfg.server.aggregator,
                                init_params(spec_, cfg.server.model.seed, cfg.server.model.dtype), cfg.server.hyper);
  scheduler_ = make_scheduler(cfg.server.scheduler, *aggregator_, default_local_steps(cfg), cfg.n_clients(),
                              cfg.server.compass);
  if (!connector_) connector_ = connector_for(cfg.clients.front().comm);
  if (connector_) registry_.add(connector_);
  inline_limit_ = cfg.clients.front().comm.inline_limit;
  last_epoch_ = aggregator_->epoch();
  for (auto& r : evaluate(aggregator_->global(), val_, spec_, "server", 0.0)) records_.push_back(std::move(r));
  records_.push_back({0.0, "server", "epoch", 0.0});
  if (scheduler_->kind() == SchedulerKind::compass) timer_ = std::thread([this] { timer_loop(); });
}

ServerRuntime::~ServerRuntime() {
  {
    std::lock_guard lk(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (timer_.joinable()) timer_.join();
}

double ServerRuntime::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

bool ServerRuntime::done() const {
  std::lock_guard lk(mu_);
  return done_;
}

std::string ServerRuntime::resolve_identity(const Envelope& req, const std::string& identity) const {
  std::string id = identity.empty() ? req.get_or("client_id", "") : identity;
  if (id.empty()) fail(Errc::protocol_error, "request does not say which client it is from");
  for (const auto& c : cfg_.clients)
    if (c.id == id) return id;
  fail(Errc::unknown_client, "client '" + id + "' is not part of this experiment");
}

Frame ServerRuntime::reply_frame(MessageType type, std::map<std::string, std::string> meta, const ParameterSet* params) {
  Bytes body;
  if (params) {
    meta["encoding"] = "raw";
    body = serialize_params(*params);
  }
  return make_frame(type, "", make_envelope(std::move(meta), std::move(body), connector_.get(), inline_limit_));
}

Frame ServerRuntime::handle(const Frame& request, const std::string& identity) {
  const Envelope req = decode_envelope(request.payload);
  const std::string id = resolve_identity(req, identity);
  switch (request.type) {
    case MessageType::config_request: return on_config(req, id);
    case MessageType::model_request: return on_model(id);
    case MessageType::update_submit: return on_update(req, id);
    case MessageType::custom_task: return Frame{MessageType::custom_task, "", request.payload};
    default: fail(Errc::unknown_type, "server does not accept " + std::string(message_type_name(request.type)));
  }
}

Frame ServerRuntime::on_config(const Envelope&, const std::string& id) {
  std::size_t index = 0;
  while (cfg_.clients[index].id != id) ++index;
  std::map<std::string, std::string> meta{
      {"client_index", std::to_string(cfg_.clients[index].data.index.value_or(static_cast<int>(index)))},
      {"n_clients", std::to_string(cfg_.n_clients())},
      {"layer_dims", join_ints(spec_.layer_dims)},
      {"activation", spec_.activation == Activation::relu ? "relu" : "identity"},
      {"loss", spec_.loss == Loss::mse ? "mse" : "softmax_cross_entropy"},
  };
  const std::string shared = to_yaml_string(cfg_.shared_client_configs);
  return make_frame(MessageType::config_reply, "",
                    make_envelope(std::move(meta), Bytes(shared.begin(), shared.end()), nullptr, SIZE_MAX));
}

Frame ServerRuntime::on_model(const std::string& id) {
  std::unique_lock lk(mu_);
  if (done_) {
    told_done_[id] = true;
    cv_.notify_all();
    return reply_frame(MessageType::model_reply, {{"done", "1"}}, nullptr);
  }
  const int steps = scheduler_->on_join(id, now());
  const ParameterSet global = aggregator_->global();
  const auto epoch = aggregator_->epoch();
  lk.unlock();
  cv_.notify_all();  // a join can open a Compass deadline
  return reply_frame(MessageType::model_reply,
                     {{"epoch", std::to_string(epoch)}, {"steps", std::to_string(steps)}, {"done", "0"}}, &global);
}

Frame ServerRuntime::on_update(const Envelope& req, const std::string& id) {
  ModelUpdate u;
  u.client_id = id;
  u.params = decode_params(req, registry_, connector_.get());
  u.is_delta = req.get_or("is_delta", "0") == "1";
  u.sample_count = static_cast<std::uint64_t>(meta_int(req, "sample_count"));
  u.local_steps = static_cast<std::uint32_t>(meta_int(req, "local_steps"));
  u.base_epoch = meta_int(req, "base_epoch");

  std::unique_lock lk(mu_);
  if (!done_) {
    pending_.erase(id);
    process(scheduler_->on_update(std::move(u), now()));
  }
  cv_.wait(lk, [&] { return done_ || stopping_ || pending_.contains(id); });
  if (done_ || stopping_) {
    told_done_[id] = true;
    cv_.notify_all();
    return reply_frame(MessageType::update_reply, {{"done", "1"}}, nullptr);
  }
  SchedulerAction a = std::move(pending_.at(id));
  pending_.erase(id);
  lk.unlock();
  return reply_frame(MessageType::update_reply,
                     {{"epoch", std::to_string(a.epoch)}, {"steps", std::to_string(a.next_steps)}, {"done", "0"}},
                     a.global.get());
}

void ServerRuntime::check_done() {
  if (scheduler_->kind() == SchedulerKind::sync)
    done_ = aggregations_ >= cfg_.server.num_global_epochs;
  else
    done_ = scheduler_->updates_received() >= static_cast<std::uint64_t>(cfg_.server.num_global_epochs) *
                                                   cfg_.n_clients();
}

void ServerRuntime::process(std::vector<SchedulerAction> actions) {
  for (auto& a : actions) {
    if (a.kind == SchedulerAction::Kind::aggregate) {
      if (aggregator_->epoch() != last_epoch_) {
        last_epoch_ = aggregator_->epoch();
        ++aggregations_;
        // Epoch-indexed so repeated runs write identical metrics; wall time goes elsewhere.
        const double t = static_cast<double>(last_epoch_);
        for (auto& r : evaluate(aggregator_->global(), val_, spec_, "server", t)) records_.push_back(std::move(r));
        records_.push_back({t, "server", "epoch", t});
        wall_.push_back({now(), "server", "epoch", t});
      }
      check_done();
    } else if (a.kind == SchedulerAction::Kind::reply && !done_) {
      pending_[a.client_id] = std::move(a);
    }
  }
  check_done();
  cv_.notify_all();
}

void ServerRuntime::timer_loop() {
  std::unique_lock lk(mu_);
  while (!stopping_ && !done_) {
    const auto d = scheduler_->next_deadline();
    if (!d) {
      cv_.wait_for(lk, std::chrono::milliseconds(50));
      continue;
    }
    const double wait = *d - now();
    if (wait > 0) {
      cv_.wait_for(lk, std::chrono::duration<double>(std::min(wait, 0.05)));
      continue;
    }
    process(scheduler_->on_tick(now()));
  }
}

bool ServerRuntime::wait_finished(std::chrono::milliseconds timeout) {
  std::unique_lock lk(mu_);
  return cv_.wait_for(lk, timeout, [&] {
    if (!done_) return false;
    for (const auto& c : cfg_.clients)
      if (!told_done_.contains(c.id)) return false;
    return true;
  });
}

SimResult ServerRuntime::finish() {
  {
    std::lock_guard lk(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (timer_.joinable()) timer_.join();

  std::lock_guard lk(mu_);
  bool changed = aggregator_->flush();
  if (scheduler_->kind() == SchedulerKind::compass)
    for (const auto& a : scheduler_->on_tick(std::numeric_limits<double>::infinity()))
      if (a.kind == SchedulerAction::Kind::aggregate) changed = true;
  if (changed && aggregator_->epoch() != last_epoch_) {
    last_epoch_ = aggregator_->epoch();
    ++aggregations_;
    const double t = static_cast<double>(last_epoch_);
    for (auto& r : evaluate(aggregator_->global(), val_, spec_, "server", t)) records_.push_back(std::move(r));
    records_.push_back({t, "server", "epoch", t});
  }
  SimResult res;
  res.records = records_;
  res.final_model = aggregator_->global();
  res.aggregations = aggregations_;
  res.updates = scheduler_->updates_received();
  res.end_time = now();
  return res;
}

SimResult run_server(const ExperimentConfig& cfg, const ServerRunOptions& opts) {
  ServerRuntime runtime(cfg, opts.connector);
  std::shared_ptr<const Authenticator> auth;
  if (cfg.comm.auth)
    auth = std::make_shared<StaticTokenAuthenticator>(cfg.comm.tokens);
  else
    auth = std::make_shared<NoAuthenticator>();
  Dispatcher dispatcher([&](const Frame& f, const std::string& who) { return runtime.handle(f, who); }, auth);

  TcpServerOptions so;
  so.host = cfg.comm.host;
  so.port = opts.port.value_or(cfg.comm.port);
  so.max_payload = cfg.comm.max_payload;
  TcpServer server(so, dispatcher);
  spdlog::info("server listening on {}:{} for {} clients", so.host, server.port(), cfg.n_clients());
  if (opts.on_listening) opts.on_listening(server.port());

  while (!runtime.done()) runtime.wait_finished(std::chrono::milliseconds(200));
  if (!runtime.wait_finished(opts.drain_timeout)) spdlog::warn("some clients never collected the stop signal");
  server.stop(std::chrono::milliseconds(5000));
  if (dispatcher.rejected() > 0) spdlog::warn("rejected {} unauthenticated requests", dispatcher.rejected());

  SimResult res = runtime.finish();
  if (!cfg.server.output_dir.empty()) {
    write_run_dir(cfg.server.output_dir, cfg, res);
    export_metrics(runtime.wall_records(), MetricFormat::csv, std::filesystem::path(cfg.server.output_dir) / "wall.csv");
  }
  return res;
}

ClientRunResult run_client(const YAML::Node& own, const ClientRunOptions& opts) {
  check_client_file_keys(own);
  // Enough of the file to reach the server; the full parse waits for the shared section.
  const ClientConfig pre = parse_client_config(YAML::Node(YAML::NodeType::Map), own, "");
  std::string token = pre.comm.token;
  if (const char* env = std::getenv("APFL_TOKEN"); env && *env) token = env;
  if (opts.token) token = *opts.token;

  const std::string host = opts.host.value_or(pre.comm.host);
  const std::uint16_t port = opts.port.value_or(pre.comm.port);
  if (port == 0) fail(Errc::config_error, "client needs comm_configs.server.port");
  TcpClientTransport transport(host, port, opts.retry.value_or(pre.comm.retry), pre.comm.max_payload);

  auto ask = [&](MessageType type, std::map<std::string, std::string> meta, Bytes body, DataConnector* conn,
                 std::size_t limit) {
    meta["client_id"] = pre.id;
    Frame reply = transport.roundtrip(make_frame(type, token, make_envelope(std::move(meta), std::move(body), conn, limit)));
    raise_if_error(reply);
    return decode_envelope(reply.payload);
  };

  const Envelope conf = ask(MessageType::config_request, {}, {}, nullptr, SIZE_MAX);
  const Bytes shared_raw = std::get<Bytes>(conf.body);
  const YAML::Node shared = parse_yaml_string(std::string(shared_raw.begin(), shared_raw.end()));
  ClientConfig c = parse_client_config(shared, own, pre.id);
  if (!c.data.index) c.data.index = static_cast<int>(meta_int(conf, "client_index"));
  if (c.data.partition.n_clients == 0) c.data.partition.n_clients = static_cast<int>(meta_int(conf, "n_clients"));

  ModelSpec spec;
  spec.layer_dims = split_ints(conf.get("layer_dims"));
  spec.activation = parse_activation(conf.get("activation"));
  spec.loss = parse_loss(conf.get("loss"));
  spec.validate();
  auto agent = make_client_agent(c, spec);

  std::shared_ptr<DataConnector> connector = opts.connector ? opts.connector : connector_for(c.comm);
  ConnectorRegistry registry;
  if (connector) registry.add(connector);

  ClientRunResult result{c.id, 0};
  Envelope reply = ask(MessageType::model_request, {}, {}, nullptr, SIZE_MAX);
  while (reply.get_or("done", "0") != "1") {
    const ParameterSet global = decode_params(reply, registry, connector.get());
    const std::int64_t epoch = meta_int(reply, "epoch");
    const int steps = static_cast<int>(meta_int(reply, "steps"));
    ModelUpdate u = agent->apply_privacy_then_package(agent->local_train(global, epoch, steps), &global);
    std::map<std::string, std::string> meta{{"sample_count", std::to_string(u.sample_count)},
                                            {"local_steps", std::to_string(u.local_steps)},
                                            {"base_epoch", std::to_string(u.base_epoch)},
                                            {"is_delta", u.is_delta ? "1" : "0"}};
    Bytes body = encode_params(u.params, c.comm.compressor, meta);
    reply = ask(MessageType::update_submit, std::move(meta), std::move(body), connector.get(), c.comm.inline_limit);
    ++result.rounds;
  }
  spdlog::info("client {} finished after {} rounds", c.id, result.rounds);
  return result;
}

}  // namespace apfl
