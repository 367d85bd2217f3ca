#pragma once

#include <string>
#include <vector>

#include "masktab/data/dataset.hpp"

namespace masktab::data {

struct MissingnessStats {
  /// η_k: share of missing cells per feature on the reference split.
  std::vector<double> feature_rates;
  /// η(x): share of missing cells per row.
  std::vector<double> instance_ratios;
  double eta_max = 0.0;
};

/// Throws ProtocolError on an empty dataset.
MissingnessStats missing_rates(const Dataset& train);

/// Share of rows whose missing ratio falls into each of `bins` equal-width
/// bins over [0, 1]; a ratio of exactly 1 lands in the last bin.
std::vector<double> instance_missing_histogram(const MissingnessStats& stats, std::size_t bins = 10);

/// Information value of one feature against binary labels (0 = good,
/// 1 = bad). Numerical features use equal-frequency bins over observed values
/// (ties ordered by value, then row id); categorical features use their
/// categories; missing cells form their own bin. Every bin count receives
/// 0.5 additive smoothing and the result is clamped at 0.
///
/// Throws ProtocolError if labels are absent, not binary, or single-class.
double information_value(const Dataset& ds, std::size_t feature, std::size_t n_bins = 10);

struct FeatureRanking {
  std::vector<std::string> names;   // schema order
  std::vector<double> scores;       // schema order
  std::vector<std::size_t> order;   // feature indices, best first
  std::vector<std::size_t> rank;    // 1-based rank per feature, schema order
};

/// Descending score, ties broken by ascending feature name.
FeatureRanking rank_features(const Dataset& ds, std::size_t n_bins = 10);
FeatureRanking make_ranking(std::vector<std::string> names, std::vector<double> scores);

/// Top m·group_size features (truncated to d), as feature indices in rank
/// order. Throws ProtocolError when m < 1 or group_size < 1.
std::vector<std::size_t> feature_groups(const FeatureRanking& ranking, std::size_t group_size, std::size_t m);

}  // namespace masktab::data
