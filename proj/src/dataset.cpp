#include "gditd/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "gditd/error.hpp"
#include "gditd/rng.hpp"

namespace gditd {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(trim(field));
      field.clear();
      continue;
    }
    field.push_back(c);
  }
  out.push_back(trim(field));
  return out;
}

std::optional<double> parse_double(std::string_view text) {
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::string> default_class_order(const std::set<std::string>& names) {
  std::vector<std::string> order(names.begin(), names.end());
  const bool numeric = std::all_of(order.begin(), order.end(), [](const std::string& s) {
    return parse_double(s).has_value();
  });
  if (numeric) {
    std::stable_sort(order.begin(), order.end(), [](const std::string& a, const std::string& b) {
      return *parse_double(a) < *parse_double(b);
    });
  }
  return order;
}

std::optional<int> find_class(const std::vector<std::string>& names, const std::optional<std::string>& wanted,
                              const char* role) {
  if (!wanted) return std::nullopt;
  auto it = std::find(names.begin(), names.end(), *wanted);
  if (it == names.end()) throw DataError(std::string(role) + " class '" + *wanted + "' does not occur in the labels");
  return static_cast<int>(it - names.begin());
}

}  // namespace

std::vector<std::size_t> TabularDataset::id_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows(); ++r) {
    if (!is_ood_row(r)) out.push_back(r);
  }
  return out;
}

std::vector<std::size_t> TabularDataset::ood_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows(); ++r) {
    if (is_ood_row(r)) out.push_back(r);
  }
  return out;
}

std::vector<int> TabularDataset::id_classes() const {
  std::vector<int> out;
  for (int c = 0; c < static_cast<int>(class_count()); ++c) {
    if (!ood_class || c != *ood_class) out.push_back(c);
  }
  return out;
}

std::vector<std::size_t> TabularDataset::rows_of_class(int cls) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows(); ++r) {
    if (labels[r] == cls) out.push_back(r);
  }
  return out;
}

TabularDataset TabularDataset::subset(std::span<const std::size_t> rows) const {
  TabularDataset out = *this;
  out.features = features.gather_rows(rows);
  out.labels.clear();
  for (std::size_t r : rows) out.labels.push_back(labels.at(r));
  return out;
}

void TabularDataset::validate() const {
  require(features.rows() == labels.size(), "dataset: one label per feature row required");
  require(feature_names.empty() || feature_names.size() == features.cols(), "dataset: feature name count mismatch");
  for (int y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < class_count(), "dataset: label outside class list");
  }
  if (ood_class) require(*ood_class >= 0 && static_cast<std::size_t>(*ood_class) < class_count(), "dataset: bad OOD class");
  if (minority_class) {
    require(*minority_class >= 0 && static_cast<std::size_t>(*minority_class) < class_count(),
            "dataset: bad minority class");
    require(!ood_class || *minority_class != *ood_class, "dataset: minority class cannot be the OOD class");
  }
}

ClassMap::ClassMap(std::vector<int> id_classes) : classes_(std::move(id_classes)) {}

int ClassMap::head_index(int dataset_class) const {
  auto it = std::find(classes_.begin(), classes_.end(), dataset_class);
  return it == classes_.end() ? -1 : static_cast<int>(it - classes_.begin());
}

CsvSchema load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  CsvSchema schema;
  schema.label_column = j.value("label_column", std::string("label"));
  if (j.contains("ood_class") && !j["ood_class"].is_null()) schema.ood_class = j["ood_class"].get<std::string>();
  if (j.contains("minority_class") && !j["minority_class"].is_null())
    schema.minority_class = j["minority_class"].get<std::string>();
  if (j.contains("classes")) schema.classes = j["classes"].get<std::vector<std::string>>();
  return schema;
}

void save_manifest(const CsvSchema& schema, const std::filesystem::path& path) {
  nlohmann::json j;
  j["label_column"] = schema.label_column;
  j["ood_class"] = schema.ood_class ? nlohmann::json(*schema.ood_class) : nlohmann::json();
  j["minority_class"] = schema.minority_class ? nlohmann::json(*schema.minority_class) : nlohmann::json();
  j["classes"] = schema.classes;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

TabularDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  auto label_it = std::find(header.begin(), header.end(), schema.label_column);
  if (label_it == header.end()) throw DataError(path.string() + ": no label column '" + schema.label_column + "'");
  const std::size_t label_col = static_cast<std::size_t>(label_it - header.begin());

  TabularDataset data;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != label_col) data.feature_names.push_back(header[c]);
  }
  const std::size_t p = data.feature_names.size();
  std::vector<double> values;
  std::vector<std::string> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_col) {
        raw_labels.push_back(cells[c]);
        continue;
      }
      auto v = parse_double(cells[c]);
      if (!v || !std::isfinite(*v)) {
        throw DataError(path.string() + ": non-numeric value '" + cells[c] + "' at line " + std::to_string(line_no) +
                        ", column '" + header[c] + "'");
      }
      values.push_back(*v);
    }
  }

  std::set<std::string> distinct(raw_labels.begin(), raw_labels.end());
  if (schema.classes.empty()) {
    data.class_names = default_class_order(distinct);
  } else {
    data.class_names = schema.classes;
    for (const auto& name : distinct) {
      if (std::find(data.class_names.begin(), data.class_names.end(), name) == data.class_names.end()) {
        throw DataError(path.string() + ": label '" + name + "' missing from the manifest class list");
      }
    }
  }
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < data.class_names.size(); ++i) index[data.class_names[i]] = static_cast<int>(i);
  for (const auto& name : raw_labels) data.labels.push_back(index.at(name));
  data.features = Matrix(raw_labels.size(), p, std::move(values));
  data.ood_class = find_class(data.class_names, schema.ood_class, "OOD");
  data.minority_class = find_class(data.class_names, schema.minority_class, "minority");
  data.validate();
  return data;
}

void save_csv(const TabularDataset& data, const std::filesystem::path& path, const std::string& label_column) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t c = 0; c < data.feature_count(); ++c) {
    out << (data.feature_names.empty() ? "f" + std::to_string(c) : data.feature_names[c]) << ',';
  }
  out << label_column << '\n';
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (double v : data.features.row(r)) out << format_double(v) << ',';
    out << data.class_names[static_cast<std::size_t>(data.labels[r])] << '\n';
  }
}

CsvSchema schema_of(const TabularDataset& data, const std::string& label_column) {
  CsvSchema schema;
  schema.label_column = label_column;
  schema.classes = data.class_names;
  if (data.ood_class) schema.ood_class = data.class_names[static_cast<std::size_t>(*data.ood_class)];
  if (data.minority_class) schema.minority_class = data.class_names[static_cast<std::size_t>(*data.minority_class)];
  return schema;
}

NormalizationStats fit_zscore(const Matrix& features, std::span<const std::size_t> rows) {
  require(!rows.empty(), "fit_zscore: no training rows");
  const std::size_t p = features.cols();
  NormalizationStats stats{std::vector<double>(p, 0.0), std::vector<double>(p, 1.0)};
  const double n = static_cast<double>(rows.size());
  for (std::size_t c = 0; c < p; ++c) {
    const double first = features(rows[0], c);
    bool constant = true;
    double sum = 0.0;
    for (std::size_t r : rows) {
      sum += features(r, c);
      constant = constant && features(r, c) == first;
    }
    if (constant) {
      stats.mean[c] = first;
      continue;
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r : rows) {
      const double diff = features(r, c) - mean;
      ss += diff * diff;
    }
    stats.mean[c] = mean;
    const double sd = std::sqrt(ss / n);
    stats.scale[c] = sd > 0.0 ? sd : 1.0;
  }
  return stats;
}

Matrix apply_zscore(const NormalizationStats& stats, const Matrix& features) {
  require(stats.mean.size() == features.cols(), "apply_zscore: stats do not match feature count");
  Matrix out = features;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - stats.mean[c]) / stats.scale[c];
  }
  return out;
}

TabularDataset zscore_fit_apply(const TabularDataset& data, std::span<const std::size_t> train_rows) {
  TabularDataset out = data;
  out.normalization = fit_zscore(data.features, train_rows);
  out.features = apply_zscore(*out.normalization, data.features);
  return out;
}

std::size_t mdsr_keep_count(std::size_t minority_rows, double mdsr) {
  // slack for products such as 0.29 * 100 = 28.999999999999996
  const double exact = mdsr * static_cast<double>(minority_rows);
  return static_cast<std::size_t>(std::floor(exact + 1e-9 * std::max(1.0, exact)));
}

TabularDataset apply_mdsr(const TabularDataset& data, double mdsr, std::uint64_t seed) {
  require(mdsr > 0.0 && mdsr <= 1.0, "apply_mdsr: ratio must lie in (0, 1]");
  require(data.minority_class.has_value(), "apply_mdsr: no minority class designated");
  if (mdsr == 1.0) return data;
  auto minority = data.rows_of_class(*data.minority_class);
  const std::size_t keep = mdsr_keep_count(minority.size(), mdsr);
  if (keep < 2) {
    throw ContractError("apply_mdsr: ratio " + std::to_string(mdsr) + " leaves " + std::to_string(keep) +
                        " minority rows, need at least 2");
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(minority));
  std::vector<char> drop(data.rows(), 0);
  for (std::size_t i = keep; i < minority.size(); ++i) drop[minority[i]] = 1;
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    if (!drop[r]) rows.push_back(r);
  }
  return data.subset(rows);
}

TabularDataset make_blobs(const BlobSpec& spec) {
  require(spec.classes >= 2, "make_blobs: need at least 2 ID classes");
  require(spec.separation > 0.0, "make_blobs: separation must be positive");
  require(spec.ood_offset > 0.0, "make_blobs: ood_offset must be positive");
  require(spec.dim > spec.classes, "make_blobs: dim must exceed the number of ID classes");
  require(spec.imbalance.empty() || spec.imbalance.size() == spec.classes,
          "make_blobs: one imbalance fraction per ID class");
  const std::size_t k = spec.classes;
  const double a = spec.separation / std::sqrt(2.0);
  const double circumradius = a * std::sqrt(static_cast<double>(k - 1) / static_cast<double>(k));
  const double height =
      std::sqrt(std::max(spec.ood_offset * spec.ood_offset - circumradius * circumradius, 0.0));

  Matrix centers(k + 1, spec.dim);
  for (std::size_t i = 0; i < k; ++i) {
    centers(i, i) = a;
    centers(k, i) = a / static_cast<double>(k);
  }
  centers(k, k) = height;

  std::vector<std::size_t> counts(k + 1, spec.per_class);
  for (std::size_t i = 0; i < spec.imbalance.size(); ++i) {
    require(spec.imbalance[i] >= 0.0 && spec.imbalance[i] <= 1.0, "make_blobs: fractions must lie in [0, 1]");
    counts[i] = static_cast<std::size_t>(std::floor(spec.imbalance[i] * static_cast<double>(spec.per_class)));
  }

  TabularDataset data;
  for (std::size_t i = 0; i < k; ++i) data.class_names.push_back(std::to_string(i));
  data.class_names.emplace_back("ood");
  for (std::size_t c = 0; c < spec.dim; ++c) data.feature_names.push_back("x" + std::to_string(c));
  data.ood_class = static_cast<int>(k);
  if (spec.minority_class) {
    data.minority_class = spec.minority_class;
  } else if (!spec.imbalance.empty()) {
    data.minority_class =
        static_cast<int>(std::min_element(spec.imbalance.begin(), spec.imbalance.end()) - spec.imbalance.begin());
  } else {
    data.minority_class = static_cast<int>(k - 1);
  }

  std::size_t total = 0;
  for (auto c : counts) total += c;
  std::vector<double> values;
  values.reserve(total * spec.dim);
  Rng rng(spec.seed);
  for (std::size_t cls = 0; cls <= k; ++cls) {
    for (std::size_t n = 0; n < counts[cls]; ++n) {
      for (std::size_t c = 0; c < spec.dim; ++c) values.push_back(centers(cls, c) + spec.noise * rng.normal());
      data.labels.push_back(static_cast<int>(cls));
    }
  }
  data.features = Matrix(total, spec.dim, std::move(values));
  data.validate();
  return data;
}

std::vector<std::size_t> SplitPlan::validation_rows(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < fold_of_row.size(); ++r) {
    if (fold_of_row[r] == static_cast<int>(fold)) out.push_back(r);
  }
  return out;
}

std::vector<std::size_t> SplitPlan::training_rows(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < fold_of_row.size(); ++r) {
    if (fold_of_row[r] >= 0 && fold_of_row[r] != static_cast<int>(fold)) out.push_back(r);
  }
  return out;
}

SplitPlan stratified_folds(const TabularDataset& data, std::size_t folds, std::uint64_t seed, bool strict) {
  require(folds >= 2, "stratified_folds: need at least 2 folds");
  SplitPlan plan;
  plan.folds = folds;
  plan.seed = seed;
  plan.fold_of_row.assign(data.rows(), -1);
  plan.ood_rows = data.ood_rows();
  Rng rng(seed);
  std::size_t offset = 0;
  for (int cls : data.id_classes()) {
    auto rows = data.rows_of_class(cls);
    if (strict && rows.size() < folds) {
      throw ContractError("stratified_folds: class '" + data.class_names[static_cast<std::size_t>(cls)] + "' has " +
                          std::to_string(rows.size()) + " rows, fewer than " + std::to_string(folds) + " folds");
    }
    rng.shuffle(std::span<std::size_t>(rows));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      plan.fold_of_row[rows[i]] = static_cast<int>((offset + i) % folds);
    }
    offset = (offset + rows.size()) % folds;
  }
  return plan;
}

std::uint64_t dataset_checksum(const TabularDataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(data.features.rows());
  mix(data.features.cols());
  for (double v : data.features.values()) mix(std::bit_cast<std::uint64_t>(v));
  for (int y : data.labels) mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(y)));
  return h;
}

}  // namespace gditd
