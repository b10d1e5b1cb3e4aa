#include "apfl/harness/bench.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include <spdlog/spdlog.h>

#include "apfl/comm/envelope.hpp"
#include "apfl/comm/transport.hpp"
#include "apfl/error.hpp"

namespace apfl {

const std::vector<SizeModel>& reference_models() {
  // Counts rounded to the precision the sizes are usually quoted at.
  static const std::vector<SizeModel> models{
      {"fc1x1", 2},
      {"cnn", 1'200'000},
      {"resnet18", 11'170'000},
      {"resnet50", 23'520'000},
      {"resnet101", 42'510'000},
      {"vit", 88'220'000},
  };
  return models;
}

const SizeModel& reference_model(const std::string& name) {
  for (const auto& m : reference_models())
    if (m.name == name) return m;
  fail(Errc::unknown_strategy_name, "no reference model named '" + name + "'");
}

ParameterSet synthetic_model(std::uint64_t params, std::uint64_t seed, double scale, std::uint64_t chunk) {
  if (chunk == 0) fail(Errc::invalid_argument, "chunk must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, static_cast<float>(scale));
  ParameterSet p;
  std::uint64_t left = params;
  for (int i = 0; left > 0; ++i) {
    const auto n = std::min(left, chunk);
    Tensor t(DType::f32, {static_cast<std::uint32_t>(n)});
    for (auto& v : t.f32()) v = normal(rng);
    p.add("layer" + std::to_string(i) + ".weight", std::move(t));
    left -= n;
  }
  return p;
}

std::uint64_t data_bytes(const ParameterSet& p) {
  std::uint64_t total = 0;
  for (const auto& e : p) total += e.tensor.byte_size();
  return total;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<BenchCommRow> bench_comm(const BenchCommOptions& opts) {
  if (opts.trials < 1) fail(Errc::invalid_argument, "need at least one trial");
  auto connector = std::make_shared<MemoryConnector>();
  ConnectorRegistry registry;
  registry.add(connector);
  const std::size_t limit = opts.inline_limit;

  Dispatcher dispatcher(
      [&](const Frame& req, const std::string&) {
        const Envelope env = decode_envelope(req.payload);
        Bytes body = resolve_body(env, registry);
        if (!env.is_inline()) connector->remove(std::get<DataRef>(env.body));
        return Frame{MessageType::model_reply, "",
                     encode_envelope(make_envelope({{"echo", "1"}}, std::move(body), connector.get(), limit))};
      },
      std::make_shared<NoAuthenticator>());
  InProcTransport inproc(dispatcher);
  std::unique_ptr<TcpServer> server;
  std::unique_ptr<TcpClientTransport> tcp;

  std::vector<BenchCommRow> rows;
  for (const auto size : opts.sizes) {
    const ParameterSet model = synthetic_model(size, opts.seed);
    for (const auto& name : opts.transports) {
      Transport* transport = nullptr;
      if (name == "inproc") {
        transport = &inproc;
      } else if (name == "tcp") {
        if (!server) {
          server = std::make_unique<TcpServer>(TcpServerOptions{}, dispatcher);
          tcp = std::make_unique<TcpClientTransport>("127.0.0.1", server->port());
        }
        transport = tcp.get();
      } else {
        fail(Errc::config_error, "transport must be inproc or tcp, got '" + name + "'");
      }
      BenchCommRow row;
      row.payload_bytes = serialized_size(model);
      row.transport = name;
      row.trials = opts.trials;
      row.by_reference = row.payload_bytes > limit;
      std::vector<double> times;
      for (int t = 0; t < opts.trials; ++t) {
        const auto t0 = Clock::now();
        const Envelope out = make_envelope({{"trial", std::to_string(t)}}, serialize_params(model), connector.get(), limit);
        const Frame reply = transport->roundtrip({MessageType::update_submit, "", encode_envelope(out)});
        raise_if_error(reply);
        const Envelope back = decode_envelope(reply.payload);
        const ParameterSet echoed = deserialize_params(resolve_body(back, registry));
        if (!back.is_inline()) connector->remove(std::get<DataRef>(back.body));
        times.push_back(seconds_since(t0));
        if (t == 0 && !(echoed == model)) fail(Errc::internal, "echoed model differs from the one sent");
        if (out.is_inline() == row.by_reference) fail(Errc::internal, "envelope did not follow the inline limit");
      }
      mean_std(times, row.mean_seconds, row.std_seconds);
      spdlog::info("bench-comm {} B over {}{}: {:.6f} s", row.payload_bytes, name,
                   row.by_reference ? " (by reference)" : "", row.mean_seconds);
      rows.push_back(row);
    }
  }
  if (server) server->stop();
  return rows;
}

void write_bench_comm_csv(const std::vector<BenchCommRow>& rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "payload_bytes,transport,by_reference,trials,mean_seconds,std_seconds\n";
  for (const auto& r : rows)
    out << r.payload_bytes << ',' << r.transport << ',' << (r.by_reference ? 1 : 0) << ',' << r.trials << ','
        << format_number(r.mean_seconds) << ',' << format_number(r.std_seconds) << '\n';
}

NamedCodec parse_named_codec(const std::string& spec) {
  NamedCodec nc;
  const auto colon = spec.find(':');
  nc.name = spec.substr(0, colon);
  if (nc.name == "qz") {
    nc.codec.lossy = LossyKind::qz;
    nc.codec.lossless = LosslessKind::deflate;
  } else {
    nc.codec.lossy = LossyKind::none;
    nc.codec.lossless = parse_lossless(nc.name);
  }
  if (colon != std::string::npos) {
    try {
      nc.codec.eb_rel = std::stod(spec.substr(colon + 1));
    } catch (const std::logic_error&) {
      fail(Errc::config_error, "bad error bound in '" + spec + "'");
    }
    nc.name = spec;
  }
  nc.codec.validate();
  return nc;
}

std::vector<BenchCompressRow> bench_compress(const std::vector<SizeModel>& models,
                                             const std::vector<NamedCodec>& codecs, std::uint64_t seed) {
  std::vector<BenchCompressRow> rows;
  for (const auto& m : models) {
    const ParameterSet model = synthetic_model(m.params, seed);
    for (const auto& c : codecs) {
      BenchCompressRow row;
      row.model = m.name;
      row.codec = c.name;
      row.original_bytes = data_bytes(model);
      auto t0 = Clock::now();
      const CompressedBlob blob = compress_params(model, c.codec);
      row.compress_seconds = seconds_since(t0);
      t0 = Clock::now();
      const ParameterSet back = decompress_params(blob);
      row.decompress_seconds = seconds_since(t0);
      row.compressed_bytes = blob.bytes.size();
      row.ratio = static_cast<double>(row.original_bytes) / static_cast<double>(row.compressed_bytes);
      for (std::size_t e = 0; e < model.size(); ++e) {
        const auto a = model[e].tensor.f32();
        const auto b = back[e].tensor.f32();
        const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
        const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
        double worst = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
          worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
        if (range > 0) row.max_error_over_range = std::max(row.max_error_over_range, worst / range);
      }
      spdlog::info("bench-compress {} {}: ratio {:.3f}", m.name, c.name, row.ratio);
      rows.push_back(row);
    }
  }
  return rows;
}

void write_bench_compress_csv(const std::vector<BenchCompressRow>& rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "model,codec,original_bytes,compressed_bytes,ratio,compress_seconds,decompress_seconds,max_error_over_range\n";
  for (const auto& r : rows)
    out << r.model << ',' << r.codec << ',' << r.original_bytes << ',' << r.compressed_bytes << ','
        << format_number(r.ratio) << ',' << format_number(r.compress_seconds) << ','
        << format_number(r.decompress_seconds) << ',' << format_number(r.max_error_over_range) << '\n';
}

std::vector<ClientUtilization> report_utilization(const std::filesystem::path& run_dir) {
  const auto rows = utilization_from_gantt(read_gantt_csv(run_dir / "gantt.csv"));
  write_utilization_csv(rows, run_dir / "utilization_report.csv");
  return rows;
}

}  // namespace apfl
