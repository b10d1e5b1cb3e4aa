#include "apfl/harness/config.hpp"

#include <algorithm>
#include <array>
#include <span>
#include <fstream>
#include <set>
#include <sstream>

#include "apfl/error.hpp"
#include "apfl/topology/topology.hpp"

namespace apfl {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// A YAML mapping with a fixed key vocabulary.
class Section {
 public:
  Section(YAML::Node node, std::string path, std::initializer_list<std::string_view> allowed)
      : Section(std::move(node), std::move(path), std::span<const std::string_view>(allowed.begin(), allowed.size())) {}

  Section(YAML::Node node, std::string path, std::span<const std::string_view> allowed)
      : node_(std::move(node)), path_(std::move(path)) {
    if (!node_ || node_.IsNull()) return;
    if (!node_.IsMap()) fail(Errc::parse_error, (path_.empty() ? "document" : path_) + " must be a mapping");
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
        fail(Errc::unknown_key, "unknown key '" + join(path_, key) + "'");
    }
  }

  bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key] && !node_[key].IsNull(); }
  YAML::Node at(const std::string& key) const { return has(key) ? node_[key] : YAML::Node(); }
  std::string path(const std::string& key) const { return join(path_, key); }

  template <typename T>
  std::optional<T> get(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    try {
      return node_[key].as<T>();
    } catch (const YAML::Exception&) {
      fail(Errc::parse_error, "'" + path(key) + "' has the wrong type");
    }
  }

  template <typename T>
  void read(const std::string& key, T& into) const {
    if (auto v = get<T>(key)) into = *v;
  }

 private:
  YAML::Node node_;
  std::string path_;
};

std::uint16_t as_port(int v, const std::string& where) {
  if (v < 0 || v > 65535) fail(Errc::config_error, where + " must be a port number");
  return static_cast<std::uint16_t>(v);
}

DatasetSpec parse_dataset(const Section& data, const std::string& path) {
  DatasetSpec d;
  data.read("dataset_name", d.name);
  std::transform(d.name.begin(), d.name.end(), d.name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (d.name != "blobs" && d.name != "csv" && d.name != "diabetes")
    fail(Errc::unknown_strategy_name, "no dataset named '" + d.name + "' (blobs, csv, diabetes)");
  Section kw(data.at("dataset_kwargs"), join(path, "dataset_kwargs"),
             {"classes", "dim", "per_class", "spread", "seed", "path", "class_count", "val_fraction", "split_seed"});
  kw.read("classes", d.classes);
  kw.read("dim", d.dim);
  kw.read("per_class", d.per_class);
  kw.read("spread", d.spread);
  kw.read("seed", d.seed);
  kw.read("path", d.path);
  if (auto c = kw.get<int>("class_count")) d.class_count = *c;
  kw.read("val_fraction", d.val_fraction);
  kw.read("split_seed", d.split_seed);
  if (!(d.val_fraction >= 0.0 && d.val_fraction < 1.0))
    fail(Errc::config_error, join(path, "dataset_kwargs.val_fraction") + " must be in [0, 1)");
  if (d.name == "csv" && d.path.empty()) fail(Errc::missing_required, join(path, "dataset_kwargs.path") + " is required");
  return d;
}

ClientDataConfig parse_client_data(const YAML::Node& node, const std::string& path) {
  Section s(node, path, {"dataset_name", "dataset_kwargs", "dataset_path", "partition", "client_index"});
  if (s.has("dataset_path"))
    fail(Errc::config_error, path + ".dataset_path: loader scripts are not supported; use dataset_name");
  ClientDataConfig c;
  c.dataset = parse_dataset(s, path);
  Section p(s.at("partition"), join(path, "partition"), {"scheme", "n_clients", "classes_per_client", "alpha", "seed"});
  c.partition.n_clients = 0;
  if (auto sch = p.get<std::string>("scheme")) c.partition.scheme = parse_partition_scheme(*sch);
  p.read("n_clients", c.partition.n_clients);
  if (auto r = p.get<std::vector<int>>("classes_per_client")) {
    if (r->size() != 2) fail(Errc::config_error, p.path("classes_per_client") + " must be [lo, hi]");
    c.partition.classes_lo = (*r)[0];
    c.partition.classes_hi = (*r)[1];
  }
  p.read("alpha", c.partition.alpha);
  p.read("seed", c.partition.seed);
  if (auto i = s.get<int>("client_index")) c.index = *i;
  return c;
}

CompressorConfig parse_compressor(const YAML::Node& node, const std::string& path) {
  Section s(node, path,
            {"enabled", "lossless_compressor", "lossy_compressor", "error_bound", "small_tensor_threshold"});
  CompressorConfig c;
  // Naming a compressor turns compression on unless disabled explicitly.
  c.enabled = s.has("lossy_compressor") || s.has("lossless_compressor");
  s.read("enabled", c.enabled);
  if (auto v = s.get<std::string>("lossless_compressor")) c.codec.lossless = parse_lossless(*v);
  if (auto v = s.get<std::string>("lossy_compressor")) c.codec.lossy = parse_lossy(*v);
  s.read("error_bound", c.codec.eb_rel);
  s.read("small_tensor_threshold", c.codec.small_tensor_threshold);
  c.codec.validate();
  return c;
}

ClientCommConfig parse_client_comm(const YAML::Node& node, const std::string& path) {
  Section s(node, path,
            {"compressor_configs", "data_connector", "server", "retry", "token", "inline_limit", "max_payload"});
  ClientCommConfig c;
  c.compressor = parse_compressor(s.at("compressor_configs"), s.path("compressor_configs"));
  Section dc(s.at("data_connector"), s.path("data_connector"), {"kind", "root"});
  dc.read("kind", c.connector);
  dc.read("root", c.connector_root);
  if (c.connector != "memory" && c.connector != "filesystem")
    fail(Errc::unknown_connector, "data connector kind must be memory or filesystem, got '" + c.connector + "'");
  if (c.connector == "filesystem" && c.connector_root.empty())
    fail(Errc::missing_required, dc.path("root") + " is required for the filesystem connector");
  Section srv(s.at("server"), s.path("server"), {"host", "port"});
  srv.read("host", c.host);
  if (auto p = srv.get<int>("port")) c.port = as_port(*p, srv.path("port"));
  Section r(s.at("retry"), s.path("retry"), {"attempts", "backoff_ms"});
  r.read("attempts", c.retry.attempts);
  if (auto b = r.get<int>("backoff_ms")) c.retry.backoff = std::chrono::milliseconds(*b);
  if (c.retry.attempts < 1) fail(Errc::config_error, r.path("attempts") + " must be >= 1");
  s.read("token", c.token);
  s.read("inline_limit", c.inline_limit);
  s.read("max_payload", c.max_payload);
  return c;
}

TrainConfig parse_train(const Section& s, ClientConfig& owner) {
  TrainConfig t;
  if (auto name = s.get<std::string>("trainer"); name && *name != "VanillaTrainer" && *name != "FedProxTrainer")
    fail(Errc::unknown_strategy_name, "no trainer named '" + *name + "'");
  if (auto o = s.get<std::string>("optimizer")) t.optimizer = parse_optimizer(*o);
  s.read("lr", t.lr);
  s.read("batch_size", t.batch_size);
  s.read("local_steps", t.local_steps);
  s.read("prox_mu", t.prox_mu);
  s.read("send_delta", t.send_delta);
  s.read("seed", t.seed);
  s.read("device", owner.device);
  s.read("logging_dir", owner.logging_dir);
  s.read("checkpoint_dir", owner.checkpoint_dir);
  t.validate();
  return t;
}

PrivacyConfig parse_privacy(const YAML::Node& node, const std::string& path) {
  Section s(node, path, {"enabled", "epsilon", "clip_norm", "clip_kind"});
  PrivacyConfig p;
  s.read("enabled", p.enabled);
  // YAML spells infinity .inf; also accept the strings inf / infinity.
  for (auto [key, into] : {std::pair{"epsilon", &p.epsilon}, std::pair{"clip_norm", &p.clip_norm}}) {
    if (!s.has(key)) continue;
    const auto raw = s.get<std::string>(key).value_or("");
    if (raw == "inf" || raw == "infinity" || raw == "Infinity")
      *into = std::numeric_limits<double>::infinity();
    else
      s.read(key, *into);
  }
  if (auto k = s.get<std::string>("clip_kind")) p.clip_kind = parse_clip_kind(*k);
  if (p.enabled) p.validate();
  return p;
}

SimConfig parse_sim(const YAML::Node& node) {
  SimConfig c;
  if (!node || node.IsNull()) return c;
  Section s(node, "sim", {"mean_batch_time", "batch_time", "latency", "bandwidth", "jitter", "seed", "max_events"});
  c.present = true;
  s.read("mean_batch_time", c.mean_batch_time);
  Section bt(s.at("batch_time"), "sim.batch_time", {"distribution", "base", "spread"});
  if (auto d = bt.get<std::string>("distribution")) {
    if (*d == "fixed")
      c.distribution = BatchTimeDist::fixed;
    else if (*d == "exponential")
      c.distribution = BatchTimeDist::exponential;
    else
      fail(Errc::config_error, "sim.batch_time.distribution must be fixed or exponential");
  }
  bt.read("base", c.batch_time_base);
  bt.read("spread", c.batch_time_spread);
  s.read("latency", c.latency);
  s.read("bandwidth", c.bandwidth);
  s.read("jitter", c.jitter);
  s.read("seed", c.seed);
  s.read("max_events", c.max_events);
  if (!(c.batch_time_base > 0.0) || !(c.batch_time_spread >= 1.0))
    fail(Errc::config_error, "sim.batch_time needs base > 0 and spread >= 1");
  if (!(c.latency >= 0.0) || !(c.bandwidth > 0.0) || !(c.jitter >= 0.0 && c.jitter < 1.0))
    fail(Errc::config_error, "sim needs latency >= 0, bandwidth > 0, 0 <= jitter < 1");
  for (double t : c.mean_batch_time)
    if (!(t > 0.0)) fail(Errc::config_error, "sim.mean_batch_time entries must be positive");
  return c;
}

TopologyConfig parse_topology(const YAML::Node& node, std::size_t n_clients) {
  TopologyConfig t;
  if (!node || node.IsNull()) return t;
  Section s(node, "topology", {"kind", "tree", "adjacency", "graph", "feature_split", "vfl"});
  const auto kind = s.get<std::string>("kind").value_or("star");
  if (kind == "star")
    t.kind = TopologyKind::star;
  else if (kind == "hierarchical")
    t.kind = TopologyKind::hierarchical;
  else if (kind == "decentralized")
    t.kind = TopologyKind::decentralized;
  else if (kind == "vertical")
    t.kind = TopologyKind::vertical;
  else
    fail(Errc::config_error, "topology.kind must be star, hierarchical, decentralized or vertical");
  s.read("tree", t.tree);
  if (auto adj = s.get<std::vector<std::vector<std::size_t>>>("adjacency")) {
    for (const auto& e : *adj) {
      if (e.size() != 2) fail(Errc::config_error, "topology.adjacency entries are [a, b] pairs");
      t.edges.emplace_back(e[0], e[1]);
    }
  }
  Section g(s.at("graph"), "topology.graph", {"kind", "nodes", "degree"});
  if (s.has("graph")) {
    const auto gk = g.get<std::string>("kind").value_or("circulant");
    const auto n = g.get<std::size_t>("nodes").value_or(n_clients);
    const auto deg = g.get<std::size_t>("degree").value_or(0);
    if (gk != "complete" && gk != "circulant")
      fail(Errc::config_error, "topology.graph.kind must be complete or circulant");
    const NeighborGraph built = gk == "complete" ? NeighborGraph::complete(n) : NeighborGraph::circulant(n, deg);
    for (std::size_t i = 0; i < built.size(); ++i)
      for (auto j : built.neighbors(i))
        if (i < j) t.edges.emplace_back(i, j);
  }
  s.read("feature_split", t.feature_split);
  Section v(s.at("vfl"), "topology.vfl", {"hidden", "embedding", "batch_size"});
  v.read("hidden", t.vfl_hidden);
  v.read("embedding", t.vfl_embedding);
  v.read("batch_size", t.vfl_batch_size);
  return t;
}

constexpr std::array<std::string_view, 6> kClientKeys = {
    "client_id", "data_configs", "train_configs", "comm_configs", "privacy_configs", "sim_configs"};

ServerConfig parse_server(const YAML::Node& node, CommConfig& comm) {
  Section s(node, "server_configs",
            {"aggregator", "aggregator_kwargs", "scheduler", "scheduler_kwargs", "num_global_epochs", "model",
             "validation_data", "output_dir", "comm", "device", "logging_output_dirname"});
  ServerConfig c;
  s.read("aggregator", c.aggregator_name);
  c.aggregator = strategy_from_name(c.aggregator_name);
  Section ak(s.at("aggregator_kwargs"), "server_configs.aggregator_kwargs",
             {"server_lr", "beta1", "beta2", "tau", "momentum", "alpha", "staleness_exp", "buffer_size", "history"});
  ak.read("server_lr", c.hyper.server_lr);
  ak.read("beta1", c.hyper.beta1);
  ak.read("beta2", c.hyper.beta2);
  ak.read("tau", c.hyper.tau);
  ak.read("momentum", c.hyper.momentum);
  ak.read("alpha", c.hyper.alpha);
  ak.read("staleness_exp", c.hyper.staleness_exp);
  ak.read("buffer_size", c.hyper.buffer_size);
  ak.read("history", c.hyper.history);

  if (auto sch = s.get<std::string>("scheduler")) {
    c.scheduler = scheduler_from_name(*sch);
  } else {
    c.scheduler = c.aggregator == Strategy::fedcompass ? SchedulerKind::compass
                  : is_async_strategy(c.aggregator)    ? SchedulerKind::async
                                                       : SchedulerKind::sync;
  }
  Section sk(s.at("scheduler_kwargs"), "server_configs.scheduler_kwargs", {"qmin", "qmax", "latitude", "ema_weight"});
  sk.read("qmin", c.compass.qmin);
  sk.read("qmax", c.compass.qmax);
  sk.read("latitude", c.compass.latitude);
  sk.read("ema_weight", c.compass.ema_weight);
  c.compass.validate();
  if (is_async_strategy(c.aggregator) && c.scheduler == SchedulerKind::sync)
    fail(Errc::config_error, std::string(strategy_name(c.aggregator)) + " needs an asynchronous scheduler");
  if (!is_async_strategy(c.aggregator) && c.scheduler != SchedulerKind::sync)
    fail(Errc::config_error, std::string(strategy_name(c.aggregator)) + " needs the synchronous scheduler");

  s.read("num_global_epochs", c.num_global_epochs);
  if (c.num_global_epochs < 1) fail(Errc::config_error, "server_configs.num_global_epochs must be >= 1");

  Section m(s.at("model"), "server_configs.model", {"hidden", "layer_dims", "activation", "loss", "dtype", "seed"});
  m.read("hidden", c.model.hidden);
  m.read("layer_dims", c.model.layer_dims);
  if (auto a = m.get<std::string>("activation")) c.model.activation = parse_activation(*a);
  if (auto l = m.get<std::string>("loss")) c.model.loss = parse_loss(*l);
  if (auto d = m.get<std::string>("dtype")) c.model.dtype = parse_dtype(*d);
  m.read("seed", c.model.seed);
  for (int h : c.model.hidden)
    if (h < 1) fail(Errc::config_error, "server_configs.model.hidden widths must be >= 1");

  if (s.has("validation_data")) {
    Section v(s.at("validation_data"), "server_configs.validation_data", {"dataset_name", "dataset_kwargs"});
    c.validation = parse_dataset(v, "server_configs.validation_data");
  }
  s.read("output_dir", c.output_dir);

  Section cm(s.at("comm"), "server_configs.comm", {"bind", "auth", "max_payload"});
  if (auto bind = cm.get<std::string>("bind")) {
    const auto colon = bind->rfind(':');
    if (colon == std::string::npos) fail(Errc::config_error, "server_configs.comm.bind must be host:port");
    comm.host = bind->substr(0, colon);
    try {
      comm.port = as_port(std::stoi(bind->substr(colon + 1)), "server_configs.comm.bind");
    } catch (const std::logic_error&) {
      fail(Errc::config_error, "server_configs.comm.bind has a bad port");
    }
  }
  Section au(cm.at("auth"), "server_configs.comm.auth", {"enabled", "tokens"});
  au.read("enabled", comm.auth);
  au.read("tokens", comm.tokens);
  if (comm.auth && comm.tokens.empty()) fail(Errc::missing_required, "auth is enabled but no tokens are configured");
  cm.read("max_payload", comm.max_payload);
  return c;
}

}  // namespace

YAML::Node parse_yaml_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return YAML::Load(ss.str());
  } catch (const YAML::Exception& e) {
    fail(Errc::parse_error, path.string() + ": " + e.what());
  }
}

YAML::Node parse_yaml_string(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(Errc::parse_error, e.what());
  }
}

std::string to_yaml_string(const YAML::Node& node) {
  YAML::Emitter out;
  out << node;
  return out.c_str();
}

YAML::Node merge_yaml(const YAML::Node& base, const YAML::Node& over) {
  if (!over || over.IsNull()) return YAML::Clone(base);
  if (!base || base.IsNull() || !base.IsMap() || !over.IsMap()) return YAML::Clone(over);
  YAML::Node out = YAML::Clone(base);
  for (const auto& kv : over) {
    const auto key = kv.first.as<std::string>();
    out[key] = out[key] ? merge_yaml(out[key], kv.second) : YAML::Clone(kv.second);
  }
  return out;
}

void check_client_file_keys(const YAML::Node& own) { Section(own, "", kClientKeys); }

ClientConfig parse_client_config(const YAML::Node& shared, const YAML::Node& own, const std::string& default_id) {
  const YAML::Node merged = merge_yaml(shared, own);
  Section s(merged, "", kClientKeys);
  ClientConfig c;
  c.id = s.get<std::string>("client_id").value_or(default_id);
  if (c.id.empty()) fail(Errc::missing_required, "client_id is required");
  c.data = parse_client_data(s.at("data_configs"), "data_configs");
  Section train(s.at("train_configs"), "train_configs",
                {"trainer", "optimizer", "lr", "batch_size", "local_steps", "prox_mu", "send_delta", "seed", "device",
                 "logging_dir", "checkpoint_dir"});
  c.train = parse_train(train, c);
  c.comm = parse_client_comm(s.at("comm_configs"), "comm_configs");
  c.privacy = parse_privacy(s.at("privacy_configs"), "privacy_configs");
  Section sim(s.at("sim_configs"), "sim_configs", {"mean_batch_time"});
  if (auto t = sim.get<double>("mean_batch_time")) {
    if (!(*t > 0.0)) fail(Errc::config_error, "sim_configs.mean_batch_time must be positive");
    c.mean_batch_time = *t;
  }
  return c;
}

ExperimentConfig load_config_from_nodes(const YAML::Node& server, const std::vector<YAML::Node>& client_docs,
                                        const std::filesystem::path& base_dir) {
  Section top(server, "", {"server_configs", "client_configs", "clients", "sim", "topology"});
  if (!top.has("server_configs")) fail(Errc::missing_required, "server_configs section is required");
  ExperimentConfig cfg;
  cfg.server = parse_server(top.at("server_configs"), cfg.comm);
  cfg.shared_client_configs = top.has("client_configs") ? YAML::Clone(top.at("client_configs")) : YAML::Node(YAML::NodeType::Map);
  cfg.sim = parse_sim(top.at("sim"));

  // Client documents: those listed in the server file, then those passed in.
  std::vector<YAML::Node> docs;
  if (top.has("clients")) {
    const YAML::Node list = top.at("clients");
    if (list.IsMap()) {
      Section cnt(list, "clients", {"count"});
      const int n = cnt.get<int>("count").value_or(0);
      if (n < 1) fail(Errc::config_error, "clients.count must be >= 1");
      for (int i = 0; i < n; ++i) docs.emplace_back(YAML::NodeType::Map);
    } else if (list.IsSequence()) {
      for (const auto& item : list) {
        if (item.IsScalar()) {
          const std::filesystem::path p = item.as<std::string>();
          docs.push_back(parse_yaml_file(p.is_absolute() ? p : base_dir / p));
        } else {
          docs.push_back(item);
        }
      }
    } else {
      fail(Errc::parse_error, "clients must be a list of files/mappings or {count: N}");
    }
  }
  for (const auto& d : client_docs) docs.push_back(d);
  if (docs.empty()) fail(Errc::missing_required, "no clients configured");

  YAML::Node resolved_clients(YAML::NodeType::Sequence);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    ClientConfig c = parse_client_config(cfg.shared_client_configs, docs[i], "client" + std::to_string(i));
    if (!ids.insert(c.id).second) fail(Errc::config_error, "duplicate client_id '" + c.id + "'");
    if (!c.data.index) c.data.index = static_cast<int>(i);
    if (c.data.partition.n_clients == 0) c.data.partition.n_clients = static_cast<int>(docs.size());
    cfg.clients.push_back(std::move(c));
    YAML::Node merged = merge_yaml(cfg.shared_client_configs, docs[i]);
    merged["client_id"] = cfg.clients.back().id;
    resolved_clients.push_back(merged);
  }
  cfg.topology = parse_topology(top.at("topology"), cfg.clients.size());
  if (cfg.comm.auth)
    for (const auto& c : cfg.clients)
      if (!cfg.comm.tokens.contains(c.id)) fail(Errc::missing_required, "no token configured for client " + c.id);
  if (!cfg.sim.mean_batch_time.empty() && cfg.sim.mean_batch_time.size() != cfg.clients.size())
    fail(Errc::config_error, "sim.mean_batch_time needs one entry per client");

  cfg.snapshot = YAML::Clone(server);
  cfg.snapshot["clients"] = resolved_clients;
  cfg.snapshot.remove("client_configs");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& server_yaml,
                             const std::vector<std::filesystem::path>& client_yamls) {
  std::vector<YAML::Node> docs;
  for (const auto& p : client_yamls) docs.push_back(parse_yaml_file(p));
  return load_config_from_nodes(parse_yaml_file(server_yaml), docs, server_yaml.parent_path());
}

}  // namespace apfl
