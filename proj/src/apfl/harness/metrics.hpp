#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "apfl/core/update.hpp"

namespace apfl {

enum class MetricFormat { csv, jsonl };

MetricFormat parse_metric_format(const std::string& name);

/// Columns are timestamp, entity, kind, value. Appending to an existing
/// non-empty CSV does not repeat the header.
void export_metrics(const std::vector<MetricRecord>& records, MetricFormat format, const std::filesystem::path& path,
                    bool append = false);

std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path);
std::vector<MetricRecord> read_metrics_jsonl(const std::filesystem::path& path);

/// Shortest text that reads back to the same double.
std::string format_number(double v);

struct GanttInterval {
  std::string client;
  double start = 0.0;
  double end = 0.0;
  std::string kind;  // compute | idle
};

struct ClientUtilization {
  std::string client;
  double compute_seconds = 0.0;
  double total_seconds = 0.0;
  double utilization = 0.0;
};

struct UtilizationReport {
  std::vector<ClientUtilization> clients;
  std::vector<GanttInterval> gantt;
};

void write_gantt_csv(const std::vector<GanttInterval>& gantt, const std::filesystem::path& path);
std::vector<GanttInterval> read_gantt_csv(const std::filesystem::path& path);
void write_utilization_csv(const std::vector<ClientUtilization>& rows, const std::filesystem::path& path);

/// Recomputes per-client utilization from Gantt rows; total is the span from
/// the earliest start to the latest end over all clients.
std::vector<ClientUtilization> utilization_from_gantt(const std::vector<GanttInterval>& gantt);

}  // namespace apfl
