#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "apfl/core/params.hpp"

namespace apfl {

struct WallSpan {
  double start = 0.0;
  double end = 0.0;
};

/// A client's trained model (or its delta from the base) and where it came from.
struct ModelUpdate {
  std::string client_id;
  ParameterSet params;
  bool is_delta = false;
  std::uint64_t sample_count = 0;
  std::uint32_t local_steps = 1;
  std::int64_t base_epoch = 0;
  std::optional<WallSpan> wall_meta;
};

struct MetricRecord {
  double timestamp = 0.0;
  std::string entity;
  std::string kind;
  double value = 0.0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

}  // namespace apfl
