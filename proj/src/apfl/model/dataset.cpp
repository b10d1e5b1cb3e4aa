#include "apfl/model/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "apfl/error.hpp"

namespace apfl {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.class_count = class_count;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

Dataset Dataset::columns(std::span<const std::size_t> cols) const {
  Dataset out;
  out.class_count = class_count;
  out.labels = labels;
  out.features.resize(features.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] >= dim()) fail(Errc::dim_mismatch, "column " + std::to_string(cols[j]) + " out of range");
    out.features.col(static_cast<Eigen::Index>(j)) = features.col(static_cast<Eigen::Index>(cols[j]));
  }
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) fail(Errc::empty_dataset, "dataset has no rows");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    fail(Errc::dim_mismatch, "feature rows and label count differ");
  if (!features.allFinite()) fail(Errc::non_finite_value, "non-finite feature value");
  if (class_count) {
    for (double y : labels)
      if (y < 0 || y >= *class_count || y != std::floor(y))
        fail(Errc::invalid_argument, "class label out of range");
  }
}

Dataset make_blobs(int classes, int dim, int per_class, double spread, std::uint64_t seed) {
  if (classes < 2 || dim < 1 || per_class < 1)
    fail(Errc::invalid_argument, "make_blobs needs classes >= 2, dim >= 1, per_class >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::MatrixXd centers(classes, dim);
  for (int c = 0; c < classes; ++c)
    for (int j = 0; j < dim; ++j) centers(c, j) = normal(rng);

  Dataset ds;
  ds.class_count = classes;
  ds.features.resize(static_cast<Eigen::Index>(classes) * per_class, dim);
  ds.labels.reserve(static_cast<std::size_t>(classes) * per_class);
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < per_class; ++k, ++row) {
      for (int j = 0; j < dim; ++j) ds.features(row, j) = centers(c, j) + spread * normal(rng);
      ds.labels.push_back(c);
    }
  }
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, std::optional<int> class_count) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(Errc::parse_error, path.string() + ": missing header row");
  const auto header_cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (header_cols < 2) fail(Errc::parse_error, path.string() + ": need at least one feature and a label");

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        fail(Errc::parse_error, path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (values.size() != header_cols)
      fail(Errc::parse_error, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(header_cols) + " columns");
    rows.push_back(std::move(values));
  }

  Dataset ds;
  ds.class_count = class_count;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header_cols - 1));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j + 1 < header_cols; ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    ds.labels.push_back(rows[i].back());
  }
  ds.validate();
  return ds;
}

TrainValSplit train_val_split(const Dataset& ds, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail(Errc::invalid_argument, "val_fraction must be in [0, 1)");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {ds.subset(train), ds.subset(val)};
}

PartitionScheme parse_partition_scheme(const std::string& name) {
  if (name == "iid") return PartitionScheme::iid;
  if (name == "class_restricted") return PartitionScheme::class_restricted;
  if (name == "dirichlet") return PartitionScheme::dirichlet;
  fail(Errc::config_error, "unknown partition scheme '" + name + "'");
}

namespace {

// Split `items` into `parts` contiguous chunks whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> even_chunks(const std::vector<std::size_t>& items, std::size_t parts) {
  std::vector<std::vector<std::size_t>> out(parts);
  const std::size_t base = items.size() / parts;
  const std::size_t extra = items.size() % parts;
  std::size_t pos = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t len = base + (p < extra ? 1 : 0);
    out[p].assign(items.begin() + static_cast<std::ptrdiff_t>(pos),
                  items.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return out;
}

std::vector<std::vector<std::size_t>> rows_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(*ds.class_count));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  return by_class;
}

// Largest-remainder apportionment of `total` items by `shares` (sum 1).
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& shares) {
  std::vector<std::size_t> counts(shares.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < shares.size(); ++k) {
    const double exact = shares[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];
  return counts;
}

}  // namespace

std::vector<std::vector<std::size_t>> partition_indices(const Dataset& ds, const PartitionSpec& spec) {
  if (spec.n_clients < 1) fail(Errc::invalid_argument, "n_clients must be >= 1");
  if (ds.size() == 0) fail(Errc::empty_dataset, "cannot partition an empty dataset");
  const auto n_clients = static_cast<std::size_t>(spec.n_clients);
  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<std::size_t>> out(n_clients);

  switch (spec.scheme) {
    case PartitionScheme::iid: {
      std::vector<std::size_t> idx(ds.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      out = even_chunks(idx, n_clients);
      break;
    }
    case PartitionScheme::class_restricted: {
      if (!ds.is_classification()) fail(Errc::invalid_argument, "class_restricted needs labeled classification data");
      const int classes = *ds.class_count;
      if (spec.classes_lo < 1 || spec.classes_lo > spec.classes_hi || spec.classes_hi > classes)
        fail(Errc::invalid_argument, "classes_per_client range must satisfy 1 <= lo <= hi <= class_count");
      std::vector<std::vector<std::size_t>> owners(static_cast<std::size_t>(classes));
      std::uniform_int_distribution<int> count_dist(spec.classes_lo, spec.classes_hi);
      std::vector<std::size_t> class_ids(static_cast<std::size_t>(classes));
      for (std::size_t k = 0; k < n_clients; ++k) {
        const int take = count_dist(rng);
        std::iota(class_ids.begin(), class_ids.end(), 0);
        std::shuffle(class_ids.begin(), class_ids.end(), rng);
        std::sort(class_ids.begin(), class_ids.begin() + take);
        for (int c = 0; c < take; ++c) owners[class_ids[static_cast<std::size_t>(c)]].push_back(k);
      }
      auto by_class = rows_by_class(ds);
      for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].empty()) continue;
        if (owners[c].empty()) fail(Errc::infeasible_partition, "no client owns class " + std::to_string(c));
        std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
        auto chunks = even_chunks(by_class[c], owners[c].size());
        for (std::size_t o = 0; o < owners[c].size(); ++o)
          out[owners[c][o]].insert(out[owners[c][o]].end(), chunks[o].begin(), chunks[o].end());
      }
      break;
    }
    case PartitionScheme::dirichlet: {
      if (!ds.is_classification()) fail(Errc::invalid_argument, "dirichlet needs labeled classification data");
      if (!(spec.alpha > 0.0)) fail(Errc::invalid_argument, "dirichlet alpha must be positive");
      auto by_class = rows_by_class(ds);
      std::gamma_distribution<double> gamma(spec.alpha, 1.0);
      for (auto& rows : by_class) {
        std::vector<double> shares(n_clients);
        double total = 0.0;
        for (auto& s : shares) total += (s = gamma(rng));
        for (auto& s : shares) s /= total;
        std::shuffle(rows.begin(), rows.end(), rng);
        const auto counts = apportion(rows.size(), shares);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < n_clients; ++k) {
          out[k].insert(out[k].end(), rows.begin() + static_cast<std::ptrdiff_t>(pos),
                        rows.begin() + static_cast<std::ptrdiff_t>(pos + counts[k]));
          pos += counts[k];
        }
      }
      break;
    }
  }
  for (auto& rows : out) std::sort(rows.begin(), rows.end());
  return out;
}

std::vector<Dataset> partition(const Dataset& ds, const PartitionSpec& spec) {
  std::vector<Dataset> out;
  for (const auto& rows : partition_indices(ds, spec)) out.push_back(ds.subset(rows));
  return out;
}

}  // namespace apfl
