#pragma once

#include <string>

#include "masktab/data/dataset.hpp"

namespace masktab::data {

/// Reads a UTF-8, comma-separated file with a header row. Columns may appear
/// in any order; every schema feature must be present, label and timestamp
/// columns are optional. Empty fields become missing cells. Row ids are
/// assigned 0, 1, 2, ... in file order.
///
/// Throws IngestionError naming the (1-based) data row and column on unknown
/// columns, out-of-vocabulary categories and unparsable numbers or dates.
Dataset load_csv(const std::string& path, const FeatureSchema& schema);
Dataset parse_csv(const std::string& text, const FeatureSchema& schema);

/// Writes features, then label and timestamp columns when present. Numbers
/// use the shortest representation that round-trips exactly.
void write_csv(const std::string& path, const Dataset& ds);
std::string to_csv(const Dataset& ds);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace masktab::data
