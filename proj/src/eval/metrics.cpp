#include "masktab/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "masktab/errors.hpp"

namespace masktab::eval {

namespace {

struct Counts {
  std::uint64_t pos = 0, neg = 0;
};

Counts check(std::span<const double> scores, std::span<const double> labels, const char* what) {
  if (scores.size() != labels.size()) throw DimensionError(std::string(what) + ": scores and labels differ in length");
  Counts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw NumericError(std::string(what) + ": NaN score");
    if (labels[i] == 1.0) {
      ++c.pos;
    } else if (labels[i] == 0.0) {
      ++c.neg;
    } else {
      throw ProtocolError(std::string(what) + ": labels must be 0 or 1");
    }
  }
  if (c.pos == 0 || c.neg == 0) throw UndefinedMetricError(std::string(what) + " needs both classes present");
  return c;
}

std::vector<std::size_t> ascending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const double> labels) {
  const Counts c = check(scores, labels, "roc_auc");
  const auto order = ascending(scores);
  // Twice the winning pair count, so ties stay integral.
  std::uint64_t twice = 0, neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t p = 0, n = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1.0 ? p : n) += 1;
      ++j;
    }
    twice += p * (2 * neg_below + n);
    neg_below += n;
    i = j;
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

double ks_stat(std::span<const double> scores, std::span<const double> labels) {
  const Counts c = check(scores, labels, "ks_stat");
  auto order = ascending(scores);
  std::reverse(order.begin(), order.end());
  std::uint64_t tp = 0, fp = 0;
  double best = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1.0 ? tp : fp) += 1;
      ++j;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(c.pos);
    const double fpr = static_cast<double>(fp) / static_cast<double>(c.neg);
    best = std::max(best, std::abs(tpr - fpr));
    i = j;
  }
  return best;
}

double rmse(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw DimensionError("rmse: lengths differ");
  if (preds.empty()) throw ProtocolError("rmse needs at least one value");
  double ss = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = preds[i] - targets[i];
    ss += e * e;
  }
  return std::sqrt(ss / static_cast<double>(preds.size()));
}

}  // namespace masktab::eval
