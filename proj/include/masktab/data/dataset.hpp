#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "masktab/data/date.hpp"

namespace masktab::data {

enum class FeatureKind { numerical, categorical };
enum class LabelKind { binary, multiclass, regression };

std::string to_string(FeatureKind kind);
std::string to_string(LabelKind kind);
FeatureKind parse_feature_kind(std::string_view text);
LabelKind parse_label_kind(std::string_view text);

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::numerical;
  std::vector<std::string> vocab;  // categorical only

  /// Index of `value` in the vocabulary, if present.
  std::optional<std::size_t> category_index(std::string_view value) const;
};

struct LabelSpec {
  std::string name;
  LabelKind kind = LabelKind::binary;
  /// Class count for multiclass labels (0 = infer from data).
  std::size_t classes = 0;
};

struct FeatureSchema {
  std::vector<FeatureSpec> features;
  std::optional<LabelSpec> label;
  std::optional<std::string> timestamp;

  std::size_t size() const { return features.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  /// Throws ProtocolError on duplicate names or vocabulary entries.
  void validate() const;
  /// Schema restricted to the given features, in the given order.
  FeatureSchema select(std::span<const std::size_t> features) const;

  /// {"features":[{"name","kind","vocab"?}], "label":{"name","kind"}, "timestamp": name?}
  static FeatureSchema from_json_text(std::string_view text);
  static FeatureSchema load(const std::string& path);
  std::string to_json_text() const;
  void save(const std::string& path) const;
};

/// Row-major table with explicit missingness. Categorical cells hold their
/// vocabulary index. Missing cells carry no value.
class Dataset {
 public:
  FeatureSchema schema;

  Dataset() = default;
  explicit Dataset(FeatureSchema s);

  std::size_t rows() const { return row_ids_.size(); }
  std::size_t features() const { return schema.size(); }
  bool empty() const { return rows() == 0; }

  bool is_missing(std::size_t row, std::size_t feature) const {
    return missing_[row * features() + feature] != 0;
  }
  /// Numerical value or category index. Undefined for missing cells.
  double value(std::size_t row, std::size_t feature) const { return cells_[row * features() + feature]; }
  std::optional<double> cell(std::size_t row, std::size_t feature) const;

  bool has_labels() const { return has_labels_; }
  bool has_timestamps() const { return has_timestamps_; }
  double label(std::size_t row) const { return labels_[row]; }
  const Date& timestamp(std::size_t row) const { return timestamps_[row]; }
  std::int64_t row_id(std::size_t row) const { return row_ids_[row]; }

  std::span<const double> labels() const { return labels_; }
  std::span<const std::int64_t> row_ids() const { return row_ids_; }

  /// Appends one row; `cells` must hold exactly features() entries.
  void append(std::span<const std::optional<double>> cells, std::optional<double> label,
              std::optional<Date> timestamp, std::int64_t row_id);

  /// Rows by position, in the given order.
  Dataset subset(std::span<const std::size_t> rows) const;
  /// Columns by position, in the given order.
  Dataset select_features(std::span<const std::size_t> features) const;
  Dataset without_labels() const;

  /// Checks row-level invariants (finite numbers, in-vocabulary categories).
  void validate() const;

  friend bool operator==(const Dataset& a, const Dataset& b);

 private:
  std::vector<double> cells_;
  std::vector<std::uint8_t> missing_;
  std::vector<double> labels_;
  std::vector<Date> timestamps_;
  std::vector<std::int64_t> row_ids_;
  bool has_labels_ = false;
  bool has_timestamps_ = false;
};

}  // namespace masktab::data
