#pragma once

#include <string>
#include <vector>

#include "masktab/data/dataset.hpp"

namespace masktab::data {

struct MonthBucket {
  std::string month;  // YYYY-MM
  Dataset rows;
};

struct TemporalSplit {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<MonthBucket> test_months;  // chronological
  std::vector<std::string> warnings;
};

/// Half-open date intervals: train = (-inf, b_0), val = [b_0, b_last),
/// test = [b_last, +inf). Test rows are further bucketed by calendar month.
/// With a single boundary the validation split is empty.
///
/// Throws IngestionError when timestamps are absent and ProtocolError when
/// boundaries are empty or not strictly increasing.
TemporalSplit temporal_split(const Dataset& ds, const std::vector<Date>& boundaries);

}  // namespace masktab::data
