#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace apfl {

/// n x d features with one label per row. Classification labels are class
/// indices stored as doubles; regression labels are real targets.
struct Dataset {
  Eigen::MatrixXd features;
  std::vector<double> labels;
  std::optional<int> class_count;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  bool is_classification() const { return class_count.has_value(); }

  Dataset subset(std::span<const std::size_t> rows) const;
  Dataset columns(std::span<const std::size_t> cols) const;
  void validate() const;
};

Dataset make_blobs(int classes, int dim, int per_class, double spread, std::uint64_t seed);

/// Header row required; the last column is the label. `class_count` set means
/// the label column holds class indices.
Dataset load_csv(const std::filesystem::path& path, std::optional<int> class_count = std::nullopt);

struct TrainValSplit {
  Dataset train;
  Dataset val;
};

TrainValSplit train_val_split(const Dataset& ds, double val_fraction, std::uint64_t seed);

enum class PartitionScheme { iid, class_restricted, dirichlet };

PartitionScheme parse_partition_scheme(const std::string& name);

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::iid;
  int n_clients = 1;
  int classes_lo = 1;
  int classes_hi = 1;
  double alpha = 1.0;
  std::uint64_t seed = 0;
};

/// Disjoint row-index sets, one per client, covering every row exactly once.
std::vector<std::vector<std::size_t>> partition_indices(const Dataset& ds, const PartitionSpec& spec);
std::vector<Dataset> partition(const Dataset& ds, const PartitionSpec& spec);

}  // namespace apfl
