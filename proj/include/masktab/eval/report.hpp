#pragma once

#include <json.hpp>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "masktab/data/split.hpp"
#include "masktab/objectives/model.hpp"

namespace masktab::eval {

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

struct MetricRow {
  std::string split;  // "train", "YYYY-MM", "monthly_mean", "pooled" or "gap"
  std::size_t rows = 0;
  double auc = kNotApplicable;
  double ks = kNotApplicable;
  double rmse = kNotApplicable;
};

struct EvalReport {
  data::LabelKind kind = data::LabelKind::binary;
  std::vector<MetricRow> rows;  // train, months in order, monthly_mean, pooled, gap
  std::vector<std::string> warnings;
  nlohmann::json metadata = nlohmann::json::object();

  /// Throws ProtocolError for an unknown split.
  const MetricRow& row(const std::string& split) const;
  std::vector<MetricRow> months() const;

  std::string csv() const;
  /// Self-contained line chart of one metric over the monthly rows.
  std::string svg(const std::string& metric) const;
  /// <dir>/<stem>.csv, <stem>_<metric>.svg per applicable metric and
  /// <stem>_meta.json.
  void write(const std::string& dir, const std::string& stem = "report") const;
};

/// Metrics of natural-path predictions on one dataset. Multiclass labels
/// use macro one-vs-rest AUC and KS over softmax probabilities.
MetricRow score_dataset(objectives::Model& model, const data::Dataset& ds, const std::string& split);

/// Train metrics, one row per non-empty month, the mean over months, the
/// pooled test metrics, and gap = train − monthly mean. Empty or
/// undefined months are skipped with a warning.
EvalReport monthly_oot_report(objectives::Model& model, const data::Dataset& train,
                              std::span<const data::MonthBucket> months);

}  // namespace masktab::eval
