#include "apfl/harness/metrics.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <json.hpp>

#include "apfl/error.hpp"

namespace apfl {

MetricFormat parse_metric_format(const std::string& name) {
  if (name == "csv") return MetricFormat::csv;
  if (name == "jsonl") return MetricFormat::jsonl;
  fail(Errc::config_error, "metric format must be csv or jsonl, got '" + name + "'");
}

std::string format_number(double v) { return fmt::format("{}", v); }

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) fail(Errc::parse_error, where + ": not a number: '" + s + "'");
  return v;
}

std::ofstream open_out(const std::filesystem::path& path, bool append) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) fail(Errc::io_error, "cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  return in;
}

nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

double from_json_number(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return parse_number(j.get<std::string>(), "jsonl");
  fail(Errc::parse_error, "jsonl value is not a number");
}

}  // namespace

void export_metrics(const std::vector<MetricRecord>& records, MetricFormat format, const std::filesystem::path& path,
                    bool append) {
  const bool had_content = append && std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
  auto out = open_out(path, append);
  if (format == MetricFormat::csv) {
    if (!had_content) out << "timestamp,entity,kind,value\n";
    for (const auto& r : records)
      out << format_number(r.timestamp) << ',' << csv_field(r.entity) << ',' << csv_field(r.kind) << ','
          << format_number(r.value) << '\n';
  } else {
    for (const auto& r : records) {
      nlohmann::ordered_json j;
      j["timestamp"] = json_number(r.timestamp);
      j["entity"] = r.entity;
      j["kind"] = r.kind;
      j["value"] = json_number(r.value);
      out << j.dump() << '\n';
    }
  }
  if (!out) fail(Errc::io_error, "failed writing " + path.string());
}

std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) return {};
  if (split_csv_line(line) != std::vector<std::string>{"timestamp", "entity", "kind", "value"})
    fail(Errc::parse_error, path.string() + ": unexpected header");
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) fail(Errc::parse_error, path.string() + ": expected 4 columns");
    out.push_back({parse_number(f[0], path.string()), f[1], f[2], parse_number(f[3], path.string())});
  }
  return out;
}

std::vector<MetricRecord> read_metrics_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({from_json_number(j.at("timestamp")), j.at("entity").get<std::string>(),
                     j.at("kind").get<std::string>(), from_json_number(j.at("value"))});
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::parse_error, path.string() + ": " + e.what());
    }
  }
  return out;
}

void write_gantt_csv(const std::vector<GanttInterval>& gantt, const std::filesystem::path& path) {
  auto out = open_out(path, false);
  out << "client,start,end,kind\n";
  for (const auto& g : gantt)
    out << csv_field(g.client) << ',' << format_number(g.start) << ',' << format_number(g.end) << ',' << g.kind
        << '\n';
}

std::vector<GanttInterval> read_gantt_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"client", "start", "end", "kind"})
    fail(Errc::parse_error, path.string() + ": not a Gantt table");
  std::vector<GanttInterval> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) fail(Errc::parse_error, path.string() + ": expected 4 columns");
    out.push_back({f[0], parse_number(f[1], path.string()), parse_number(f[2], path.string()), f[3]});
  }
  return out;
}

void write_utilization_csv(const std::vector<ClientUtilization>& rows, const std::filesystem::path& path) {
  auto out = open_out(path, false);
  out << "client,compute_seconds,total_seconds,utilization\n";
  for (const auto& r : rows)
    out << csv_field(r.client) << ',' << format_number(r.compute_seconds) << ',' << format_number(r.total_seconds)
        << ',' << format_number(r.utilization) << '\n';
}

std::vector<ClientUtilization> utilization_from_gantt(const std::vector<GanttInterval>& gantt) {
  if (gantt.empty()) return {};
  double lo = gantt.front().start, hi = gantt.front().end;
  std::map<std::string, double> compute;
  for (const auto& g : gantt) {
    lo = std::min(lo, g.start);
    hi = std::max(hi, g.end);
    compute.try_emplace(g.client, 0.0);
    if (g.kind == "compute") compute[g.client] += g.end - g.start;
  }
  std::vector<ClientUtilization> out;
  const double total = hi - lo;
  for (const auto& [client, c] : compute) out.push_back({client, c, total, total > 0 ? c / total : 0.0});
  return out;
}

}  // namespace apfl
