#include "masktab/data/split.hpp"

#include <map>

#include "masktab/errors.hpp"

namespace masktab::data {

TemporalSplit temporal_split(const Dataset& ds, const std::vector<Date>& boundaries) {
  if (!ds.has_timestamps() && !ds.empty()) throw IngestionError("temporal_split: dataset has no timestamps");
  if (boundaries.empty()) throw ProtocolError("temporal_split: at least one boundary is required");
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (!(boundaries[i - 1] < boundaries[i])) {
      throw ProtocolError("temporal_split: boundaries must be strictly increasing");
    }
  }
  const Date& first = boundaries.front();
  const Date& last = boundaries.back();
  std::vector<std::size_t> train, val, test;
  std::map<std::string, std::vector<std::size_t>> months;
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    const Date& t = ds.timestamp(r);
    if (t < first) {
      train.push_back(r);
    } else if (t < last) {
      val.push_back(r);
    } else {
      test.push_back(r);
      months[t.month_key()].push_back(r);
    }
  }
  TemporalSplit out;
  out.train = ds.subset(train);
  out.val = ds.subset(val);
  out.test = ds.subset(test);
  for (auto& [month, rows] : months) out.test_months.push_back({month, ds.subset(rows)});
  if (out.train.empty()) out.warnings.push_back("train split is empty");
  if (boundaries.size() > 1 && out.val.empty()) out.warnings.push_back("validation split is empty");
  if (out.test.empty()) out.warnings.push_back("test split is empty");
  return out;
}

}  // namespace masktab::data
