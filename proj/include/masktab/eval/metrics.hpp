#pragma once

#include <span>

namespace masktab::eval {

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Labels must be 0/1 with both classes present
/// (UndefinedMetricError otherwise).
double roc_auc(std::span<const double> scores, std::span<const double> labels);

/// max |TPR − FPR| over every distinct score threshold (score >= t is
/// predicted positive).
double ks_stat(std::span<const double> scores, std::span<const double> labels);

double rmse(std::span<const double> preds, std::span<const double> targets);

}  // namespace masktab::eval
