#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apfl/compression/compression.hpp"
#include "apfl/core/params.hpp"
#include "apfl/harness/metrics.hpp"

namespace apfl {

/// A named parameter count; the synthetic model is Gaussian f32 with that many values.
struct SizeModel {
  std::string name;
  std::uint64_t params = 0;
};

/// The reference model sizes: 1x1 FC, CNN, ResNet18/50/101, ViT.
const std::vector<SizeModel>& reference_models();
const SizeModel& reference_model(const std::string& name);

/// Tensors of at most `chunk` elements, N(0, scale^2) values.
ParameterSet synthetic_model(std::uint64_t params, std::uint64_t seed, double scale = 0.05,
                             std::uint64_t chunk = std::uint64_t{1} << 20);

/// Bytes of tensor data alone (no names or headers).
std::uint64_t data_bytes(const ParameterSet& p);
inline double to_mib(std::uint64_t bytes) { return static_cast<double>(bytes) / (1024.0 * 1024.0); }

struct BenchCommRow {
  std::uint64_t payload_bytes = 0;
  std::string transport;  // inproc | tcp
  bool by_reference = false;
  int trials = 0;
  double mean_seconds = 0.0;
  double std_seconds = 0.0;
};

struct BenchCommOptions {
  std::vector<std::uint64_t> sizes;  // parameter counts
  std::vector<std::string> transports{"inproc", "tcp"};
  int trials = 10;
  std::size_t inline_limit = std::size_t{10} << 20;
  std::uint64_t seed = 0;
};

/// Two-way transfer: the client ships a model, the server resolves it and
/// sends it back the same way. Payloads over the inline limit go by DataRef.
std::vector<BenchCommRow> bench_comm(const BenchCommOptions& opts);
void write_bench_comm_csv(const std::vector<BenchCommRow>& rows, const std::filesystem::path& path);

struct BenchCompressRow {
  std::string model;
  std::string codec;
  std::uint64_t original_bytes = 0;
  std::uint64_t compressed_bytes = 0;
  double ratio = 0.0;
  double compress_seconds = 0.0;
  double decompress_seconds = 0.0;
  double max_error_over_range = 0.0;  // worst tensor
};

struct NamedCodec {
  std::string name;
  CodecConfig codec;
};

/// "qz" (lossy + deflate), "deflate", "rle", "none"; an optional ":<eb>" suffix sets the bound.
NamedCodec parse_named_codec(const std::string& spec);

std::vector<BenchCompressRow> bench_compress(const std::vector<SizeModel>& models,
                                             const std::vector<NamedCodec>& codecs, std::uint64_t seed = 0);
void write_bench_compress_csv(const std::vector<BenchCompressRow>& rows, const std::filesystem::path& path);

/// Recomputes utilization from a run directory's gantt.csv and writes
/// utilization_report.csv next to it.
std::vector<ClientUtilization> report_utilization(const std::filesystem::path& run_dir);

}  // namespace apfl
