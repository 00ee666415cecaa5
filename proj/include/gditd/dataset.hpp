#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gditd/matrix.hpp"

namespace gditd {

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> scale;  // population std, 1 for constant columns

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

// Feature rows with dense integer labels 0..classes-1. One class may be
// designated OOD (never trained on) and one as the minority class.
struct TabularDataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<std::string> feature_names;
  std::optional<int> ood_class;
  std::optional<int> minority_class;
  std::optional<NormalizationStats> normalization;

  std::size_t rows() const { return labels.size(); }
  std::size_t feature_count() const { return features.cols(); }
  std::size_t class_count() const { return class_names.size(); }
  bool is_ood_row(std::size_t r) const { return ood_class && labels[r] == *ood_class; }

  std::vector<std::size_t> id_rows() const;
  std::vector<std::size_t> ood_rows() const;
  // All non-OOD class ids in increasing order.
  std::vector<int> id_classes() const;
  std::vector<std::size_t> rows_of_class(int cls) const;

  TabularDataset subset(std::span<const std::size_t> rows) const;
  // Throws ContractError when an invariant is broken.
  void validate() const;

  friend bool operator==(const TabularDataset&, const TabularDataset&) = default;
};

// Maps dataset class ids of the ID classes onto contiguous head indices.
class ClassMap {
 public:
  ClassMap() = default;
  explicit ClassMap(std::vector<int> id_classes);
  static ClassMap from(const TabularDataset& data) { return ClassMap(data.id_classes()); }

  std::size_t size() const { return classes_.size(); }
  // Head index for a dataset class id, or -1 when the class is not ID.
  int head_index(int dataset_class) const;
  int dataset_class(int head_index) const { return classes_.at(static_cast<std::size_t>(head_index)); }
  const std::vector<int>& classes() const { return classes_; }

  friend bool operator==(const ClassMap&, const ClassMap&) = default;

 private:
  std::vector<int> classes_;
};

// Column and class naming for CSV ingestion; also the JSON manifest sidecar.
struct CsvSchema {
  std::string label_column = "label";
  std::optional<std::string> ood_class;
  std::optional<std::string> minority_class;
  // Explicit class order. When absent, distinct labels are sorted
  // numerically if they all parse as numbers, else lexicographically.
  std::vector<std::string> classes;
};

CsvSchema load_manifest(const std::filesystem::path& path);
void save_manifest(const CsvSchema& schema, const std::filesystem::path& path);

TabularDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
// Features first, label column last; values written with round-trip precision.
void save_csv(const TabularDataset& data, const std::filesystem::path& path, const std::string& label_column);
CsvSchema schema_of(const TabularDataset& data, const std::string& label_column);

NormalizationStats fit_zscore(const Matrix& features, std::span<const std::size_t> rows);
Matrix apply_zscore(const NormalizationStats& stats, const Matrix& features);
// Stats from `train_rows` only, applied to every row.
TabularDataset zscore_fit_apply(const TabularDataset& data, std::span<const std::size_t> train_rows);

// Keeps floor(mdsr * n_minority) minority rows chosen uniformly without
// replacement; all other rows keep their order.
TabularDataset apply_mdsr(const TabularDataset& data, double mdsr, std::uint64_t seed);
std::size_t mdsr_keep_count(std::size_t minority_rows, double mdsr);

struct BlobSpec {
  std::size_t classes = 3;  // ID classes
  std::size_t per_class = 200;
  std::size_t dim = 10;
  double separation = 8.0;
  double ood_offset = 12.0;
  double noise = 1.0;
  std::vector<double> imbalance;  // optional per-class fractions of per_class
  std::optional<int> minority_class;  // defaults to the last ID class
  std::uint64_t seed = 0;
};

// Isotropic Gaussian ID clusters on a scaled simplex (pairwise center
// distance exactly `separation`) plus one OOD cluster at distance
// max(ood_offset, circumradius) from every ID center. Needs dim > classes.
TabularDataset make_blobs(const BlobSpec& spec);

struct SplitPlan {
  std::size_t folds = 0;
  std::uint64_t seed = 0;
  double mdsr = 1.0;
  std::vector<int> fold_of_row;      // -1 for OOD rows
  std::vector<std::size_t> ood_rows;

  std::vector<std::size_t> validation_rows(std::size_t fold) const;
  std::vector<std::size_t> training_rows(std::size_t fold) const;
};

// Per-class seeded shuffle then round-robin assignment. With strict set,
// a class with fewer rows than folds is an error.
SplitPlan stratified_folds(const TabularDataset& data, std::size_t folds, std::uint64_t seed, bool strict = true);

// Order-sensitive hash of labels and feature bits.
std::uint64_t dataset_checksum(const TabularDataset& data);

}  // namespace gditd
