#include "masktab/data/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "masktab/errors.hpp"

namespace masktab::data {

MissingnessStats missing_rates(const Dataset& train) {
  if (train.empty()) throw ProtocolError("missing_rates: empty dataset");
  const std::size_t n = train.rows(), d = train.features();
  MissingnessStats stats;
  stats.feature_rates.assign(d, 0.0);
  stats.instance_ratios.assign(n, 0.0);
  std::vector<std::size_t> column_counts(d, 0);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t row_count = 0;
    for (std::size_t k = 0; k < d; ++k) {
      if (train.is_missing(r, k)) {
        ++row_count;
        ++column_counts[k];
      }
    }
    stats.instance_ratios[r] = d == 0 ? 0.0 : static_cast<double>(row_count) / static_cast<double>(d);
    stats.eta_max = std::max(stats.eta_max, stats.instance_ratios[r]);
  }
  for (std::size_t k = 0; k < d; ++k) {
    stats.feature_rates[k] = static_cast<double>(column_counts[k]) / static_cast<double>(n);
  }
  return stats;
}

std::vector<double> instance_missing_histogram(const MissingnessStats& stats, std::size_t bins) {
  if (bins == 0) throw ProtocolError("histogram needs at least one bin");
  std::vector<double> hist(bins, 0.0);
  if (stats.instance_ratios.empty()) return hist;
  for (const double eta : stats.instance_ratios) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>(eta * static_cast<double>(bins)));
    hist[b] += 1.0;
  }
  for (double& h : hist) h /= static_cast<double>(stats.instance_ratios.size());
  return hist;
}

namespace {

void require_binary_labels(const Dataset& ds) {
  if (!ds.has_labels()) throw ProtocolError("information value needs labels");
  bool has0 = false, has1 = false;
  for (const double y : ds.labels()) {
    if (y == 0.0) {
      has0 = true;
    } else if (y == 1.0) {
      has1 = true;
    } else {
      throw ProtocolError("information value needs binary 0/1 labels");
    }
  }
  if (!has0 || !has1) throw ProtocolError("information value needs both classes present");
}

}  // namespace

double information_value(const Dataset& ds, std::size_t feature, std::size_t n_bins) {
  require_binary_labels(ds);
  if (n_bins < 2) throw ProtocolError("information value needs n_bins >= 2");
  if (feature >= ds.features()) throw ProtocolError("information value: feature index out of range");
  const std::size_t n = ds.rows();
  const auto& spec = ds.schema.features[feature];

  // bin[r] for every row; the last bin index is reserved for missing cells.
  std::size_t bin_count = 0;
  std::vector<std::size_t> bin(n, 0);
  if (spec.kind == FeatureKind::categorical) {
    bin_count = spec.vocab.size() + 1;
    for (std::size_t r = 0; r < n; ++r) {
      bin[r] = ds.is_missing(r, feature) ? spec.vocab.size() : static_cast<std::size_t>(ds.value(r, feature));
    }
  } else {
    bin_count = n_bins + 1;
    std::vector<std::size_t> observed;
    for (std::size_t r = 0; r < n; ++r) {
      if (ds.is_missing(r, feature)) {
        bin[r] = n_bins;
      } else {
        observed.push_back(r);
      }
    }
    std::sort(observed.begin(), observed.end(), [&](std::size_t a, std::size_t b) {
      const double va = ds.value(a, feature), vb = ds.value(b, feature);
      if (va != vb) return va < vb;
      return ds.row_id(a) < ds.row_id(b);
    });
    const std::size_t m = observed.size();
    for (std::size_t i = 0; i < m; ++i) bin[observed[i]] = i * n_bins / m;
  }

  std::vector<double> good(bin_count, 0.0), bad(bin_count, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    (ds.label(r) == 1.0 ? bad : good)[bin[r]] += 1.0;
  }
  double total_good = 0.0, total_bad = 0.0;
  std::vector<std::size_t> used;
  for (std::size_t b = 0; b < bin_count; ++b) {
    if (good[b] + bad[b] == 0.0) continue;
    used.push_back(b);
    total_good += good[b] + 0.5;
    total_bad += bad[b] + 0.5;
  }
  double iv = 0.0;
  for (const std::size_t b : used) {
    const double pg = (good[b] + 0.5) / total_good;
    const double pb = (bad[b] + 0.5) / total_bad;
    iv += (pg - pb) * std::log(pg / pb);
  }
  return std::max(0.0, iv);
}

FeatureRanking make_ranking(std::vector<std::string> names, std::vector<double> scores) {
  if (names.size() != scores.size()) throw DimensionError("ranking: names and scores differ in length");
  FeatureRanking ranking;
  ranking.names = std::move(names);
  ranking.scores = std::move(scores);
  ranking.order.resize(ranking.names.size());
  std::iota(ranking.order.begin(), ranking.order.end(), std::size_t{0});
  std::sort(ranking.order.begin(), ranking.order.end(), [&](std::size_t a, std::size_t b) {
    if (ranking.scores[a] != ranking.scores[b]) return ranking.scores[a] > ranking.scores[b];
    return ranking.names[a] < ranking.names[b];
  });
  ranking.rank.assign(ranking.names.size(), 0);
  for (std::size_t i = 0; i < ranking.order.size(); ++i) ranking.rank[ranking.order[i]] = i + 1;
  return ranking;
}

FeatureRanking rank_features(const Dataset& ds, std::size_t n_bins) {
  std::vector<std::string> names;
  std::vector<double> scores;
  for (std::size_t k = 0; k < ds.features(); ++k) {
    names.push_back(ds.schema.features[k].name);
    scores.push_back(information_value(ds, k, n_bins));
  }
  return make_ranking(std::move(names), std::move(scores));
}

std::vector<std::size_t> feature_groups(const FeatureRanking& ranking, std::size_t group_size, std::size_t m) {
  if (m < 1) throw ProtocolError("feature_groups: m must be >= 1");
  if (group_size < 1) throw ProtocolError("feature_groups: group_size must be >= 1");
  const std::size_t take = std::min(ranking.order.size(), m * group_size);
  return {ranking.order.begin(), ranking.order.begin() + static_cast<std::ptrdiff_t>(take)};
}

}  // namespace masktab::data
