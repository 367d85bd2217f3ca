#include "masktab/data/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "masktab/errors.hpp"

namespace masktab::data {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

double parse_number(const std::string& text, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  if (begin != end && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw IngestionError("unparsable number '" + text + "' at row " + std::to_string(row) + ", column " + column);
  }
  return v;
}

enum class ColumnRole { feature, label, timestamp };

struct Column {
  ColumnRole role;
  std::size_t feature = 0;
};

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("cannot format number");
  return std::string(buf, ptr);
}

Dataset parse_csv(const std::string& text, const FeatureSchema& schema) {
  schema.validate();
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("CSV is empty: missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  const auto header = split_line(line);
  std::vector<Column> columns;
  std::vector<bool> seen(schema.size(), false);
  bool has_label = false, has_time = false;
  for (const auto& name : header) {
    if (const auto k = schema.index_of(name)) {
      if (seen[*k]) throw IngestionError("duplicate column '" + name + "' in header");
      seen[*k] = true;
      columns.push_back({ColumnRole::feature, *k});
    } else if (schema.label && name == schema.label->name) {
      has_label = true;
      columns.push_back({ColumnRole::label});
    } else if (schema.timestamp && name == *schema.timestamp) {
      has_time = true;
      columns.push_back({ColumnRole::timestamp});
    } else {
      throw IngestionError("unknown column '" + name + "' in header");
    }
  }
  for (std::size_t k = 0; k < schema.size(); ++k) {
    if (!seen[k]) throw IngestionError("missing column '" + schema.features[k].name + "' in header");
  }

  Dataset ds(schema);
  std::vector<std::optional<double>> cells(schema.size());
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const auto fields = split_line(line);
    if (fields.size() != columns.size()) {
      throw IngestionError("row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                           " fields, header has " + std::to_string(columns.size()));
    }
    std::optional<double> label;
    std::optional<Date> stamp;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const std::string& field = fields[c];
      const std::string& column = header[c];
      switch (columns[c].role) {
        case ColumnRole::feature: {
          const auto& spec = schema.features[columns[c].feature];
          auto& cell = cells[columns[c].feature];
          if (field.empty()) {
            cell.reset();
          } else if (spec.kind == FeatureKind::numerical) {
            cell = parse_number(field, row, column);
          } else {
            const auto idx = spec.category_index(field);
            if (!idx) {
              throw IngestionError("out-of-vocabulary category '" + field + "' at row " + std::to_string(row) +
                                   ", column " + column);
            }
            cell = static_cast<double>(*idx);
          }
          break;
        }
        case ColumnRole::label:
          if (field.empty()) throw IngestionError("empty label at row " + std::to_string(row) + ", column " + column);
          label = parse_number(field, row, column);
          break;
        case ColumnRole::timestamp:
          try {
            stamp = Date::parse(field);
          } catch (const IngestionError& e) {
            throw IngestionError(std::string(e.what()) + " at row " + std::to_string(row) + ", column " + column);
          }
          break;
      }
    }
    if (has_label && schema.label->kind != LabelKind::regression) {
      const double y = *label;
      const bool integral = y == std::floor(y) && y >= 0;
      const bool binary_ok = schema.label->kind != LabelKind::binary || y == 0.0 || y == 1.0;
      if (!integral || !binary_ok) {
        throw IngestionError("invalid class label '" + format_double(y) + "' at row " + std::to_string(row) +
                             ", column " + schema.label->name);
      }
    }
    ds.append(cells, label, stamp, static_cast<std::int64_t>(row - 1));
  }
  (void)has_time;
  return ds;
}

Dataset load_csv(const std::string& path, const FeatureSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open CSV file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema);
}

std::string to_csv(const Dataset& ds) {
  std::string out;
  const auto& schema = ds.schema;
  for (std::size_t k = 0; k < schema.size(); ++k) {
    if (k) out += ',';
    out += schema.features[k].name;
  }
  const bool label = ds.has_labels() && schema.label;
  const bool stamp = ds.has_timestamps() && schema.timestamp;
  if (label) out += ',' + schema.label->name;
  if (stamp) out += ',' + *schema.timestamp;
  out += '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t k = 0; k < schema.size(); ++k) {
      if (k) out += ',';
      if (ds.is_missing(r, k)) continue;
      const auto& spec = schema.features[k];
      if (spec.kind == FeatureKind::numerical) {
        out += format_double(ds.value(r, k));
      } else {
        out += spec.vocab[static_cast<std::size_t>(ds.value(r, k))];
      }
    }
    if (label) out += ',' + format_double(ds.label(r));
    if (stamp) out += ',' + ds.timestamp(r).str();
    out += '\n';
  }
  return out;
}

void write_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write CSV file '" + path + "'");
  out << to_csv(ds);
}

}  // namespace masktab::data
