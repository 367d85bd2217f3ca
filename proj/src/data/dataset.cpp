#include "masktab/data/dataset.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "masktab/errors.hpp"

namespace masktab::data {

using nlohmann::json;

std::string to_string(FeatureKind kind) {
  return kind == FeatureKind::numerical ? "numerical" : "categorical";
}

std::string to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::binary: return "binary";
    case LabelKind::multiclass: return "n-way";
    case LabelKind::regression: return "regression";
  }
  return "binary";
}

FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "numerical") return FeatureKind::numerical;
  if (text == "categorical") return FeatureKind::categorical;
  throw IngestionError("unknown feature kind '" + std::string(text) + "'");
}

LabelKind parse_label_kind(std::string_view text) {
  if (text == "binary") return LabelKind::binary;
  if (text == "n-way" || text == "multiclass") return LabelKind::multiclass;
  if (text == "regression") return LabelKind::regression;
  throw IngestionError("unknown label kind '" + std::string(text) + "'");
}

std::optional<std::size_t> FeatureSpec::category_index(std::string_view value) const {
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i] == value) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].name == name) return i;
  }
  return std::nullopt;
}

void FeatureSchema::validate() const {
  std::set<std::string> names;
  for (const auto& f : features) {
    if (f.name.empty()) throw ProtocolError("feature with empty name");
    if (!names.insert(f.name).second) throw ProtocolError("duplicate feature name '" + f.name + "'");
    if (f.kind == FeatureKind::categorical) {
      if (f.vocab.empty()) throw ProtocolError("categorical feature '" + f.name + "' has an empty vocabulary");
      std::set<std::string> seen;
      for (const auto& v : f.vocab) {
        if (!seen.insert(v).second) {
          throw ProtocolError("duplicate vocabulary entry '" + v + "' in feature '" + f.name + "'");
        }
      }
    } else if (!f.vocab.empty()) {
      throw ProtocolError("numerical feature '" + f.name + "' declares a vocabulary");
    }
  }
  if (label && names.count(label->name)) throw ProtocolError("label column '" + label->name + "' is also a feature");
  if (timestamp && names.count(*timestamp)) {
    throw ProtocolError("timestamp column '" + *timestamp + "' is also a feature");
  }
}

FeatureSchema FeatureSchema::select(std::span<const std::size_t> idx) const {
  FeatureSchema out;
  out.label = label;
  out.timestamp = timestamp;
  for (const std::size_t i : idx) {
    if (i >= features.size()) throw ProtocolError("feature index out of range");
    out.features.push_back(features[i]);
  }
  return out;
}

FeatureSchema FeatureSchema::from_json_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw IngestionError(std::string("schema is not valid JSON: ") + e.what());
  }
  FeatureSchema schema;
  try {
    for (const auto& [key, _] : doc.items()) {
      if (key != "features" && key != "label" && key != "timestamp") {
        throw IngestionError("schema: unknown key '" + key + "'");
      }
    }
    for (const auto& f : doc.at("features")) {
      FeatureSpec spec;
      spec.name = f.at("name").get<std::string>();
      spec.kind = parse_feature_kind(f.at("kind").get<std::string>());
      if (f.contains("vocab")) spec.vocab = f.at("vocab").get<std::vector<std::string>>();
      schema.features.push_back(std::move(spec));
    }
    if (doc.contains("label") && !doc.at("label").is_null()) {
      const auto& l = doc.at("label");
      LabelSpec spec;
      spec.name = l.at("name").get<std::string>();
      spec.kind = parse_label_kind(l.at("kind").get<std::string>());
      if (l.contains("classes")) spec.classes = l.at("classes").get<std::size_t>();
      schema.label = spec;
    }
    if (doc.contains("timestamp") && !doc.at("timestamp").is_null()) {
      schema.timestamp = doc.at("timestamp").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw IngestionError(std::string("schema: ") + e.what());
  }
  try {
    schema.validate();
  } catch (const ProtocolError& e) {
    throw IngestionError(std::string("schema: ") + e.what());
  }
  return schema;
}

FeatureSchema FeatureSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open schema file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string FeatureSchema::to_json_text() const {
  json doc;
  doc["features"] = json::array();
  for (const auto& f : features) {
    json entry{{"name", f.name}, {"kind", to_string(f.kind)}};
    if (f.kind == FeatureKind::categorical) entry["vocab"] = f.vocab;
    doc["features"].push_back(entry);
  }
  if (label) {
    json l{{"name", label->name}, {"kind", to_string(label->kind)}};
    if (label->classes) l["classes"] = label->classes;
    doc["label"] = l;
  }
  if (timestamp) doc["timestamp"] = *timestamp;
  return doc.dump(2) + "\n";
}

void FeatureSchema::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write schema file '" + path + "'");
  out << to_json_text();
}

// ---------------------------------------------------------------------------

Dataset::Dataset(FeatureSchema s) : schema(std::move(s)) {}

std::optional<double> Dataset::cell(std::size_t row, std::size_t feature) const {
  if (is_missing(row, feature)) return std::nullopt;
  return value(row, feature);
}

void Dataset::append(std::span<const std::optional<double>> cells, std::optional<double> label,
                     std::optional<Date> timestamp, std::int64_t row_id) {
  if (cells.size() != features()) {
    throw DimensionError("row " + std::to_string(row_id) + " has " + std::to_string(cells.size()) +
                         " cells, schema has " + std::to_string(features()));
  }
  if (rows() == 0) {
    has_labels_ = label.has_value();
    has_timestamps_ = timestamp.has_value();
  } else if (has_labels_ != label.has_value() || has_timestamps_ != timestamp.has_value()) {
    throw ProtocolError("rows must agree on presence of labels and timestamps");
  }
  for (const auto& c : cells) {
    cells_.push_back(c.value_or(0.0));
    missing_.push_back(c.has_value() ? 0 : 1);
  }
  if (label) labels_.push_back(*label);
  if (timestamp) timestamps_.push_back(*timestamp);
  row_ids_.push_back(row_id);
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out(schema);
  out.has_labels_ = has_labels_;
  out.has_timestamps_ = has_timestamps_;
  const std::size_t d = features();
  out.cells_.reserve(rows.size() * d);
  out.missing_.reserve(rows.size() * d);
  for (const std::size_t r : rows) {
    if (r >= this->rows()) throw ProtocolError("subset: row index out of range");
    out.cells_.insert(out.cells_.end(), cells_.begin() + static_cast<std::ptrdiff_t>(r * d),
                      cells_.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    out.missing_.insert(out.missing_.end(), missing_.begin() + static_cast<std::ptrdiff_t>(r * d),
                        missing_.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    if (has_labels_) out.labels_.push_back(labels_[r]);
    if (has_timestamps_) out.timestamps_.push_back(timestamps_[r]);
    out.row_ids_.push_back(row_ids_[r]);
  }
  return out;
}

Dataset Dataset::select_features(std::span<const std::size_t> idx) const {
  Dataset out(schema.select(idx));
  out.has_labels_ = has_labels_;
  out.has_timestamps_ = has_timestamps_;
  out.labels_ = labels_;
  out.timestamps_ = timestamps_;
  out.row_ids_ = row_ids_;
  const std::size_t d = features();
  out.cells_.reserve(rows() * idx.size());
  out.missing_.reserve(rows() * idx.size());
  for (std::size_t r = 0; r < rows(); ++r) {
    for (const std::size_t k : idx) {
      out.cells_.push_back(cells_[r * d + k]);
      out.missing_.push_back(missing_[r * d + k]);
    }
  }
  return out;
}

Dataset Dataset::without_labels() const {
  Dataset out = *this;
  out.labels_.clear();
  out.has_labels_ = false;
  return out;
}

void Dataset::validate() const {
  const std::size_t d = features();
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t k = 0; k < d; ++k) {
      if (is_missing(r, k)) continue;
      const double v = value(r, k);
      const auto& f = schema.features[k];
      if (f.kind == FeatureKind::numerical) {
        if (!std::isfinite(v)) {
          throw IngestionError("non-finite value at row " + std::to_string(row_ids_[r]) + ", column " + f.name);
        }
      } else if (v < 0 || v >= static_cast<double>(f.vocab.size()) || v != std::floor(v)) {
        throw IngestionError("category index out of vocabulary at row " + std::to_string(row_ids_[r]) +
                             ", column " + f.name);
      }
    }
  }
}

bool operator==(const Dataset& a, const Dataset& b) {
  if (a.features() != b.features() || a.rows() != b.rows()) return false;
  for (std::size_t k = 0; k < a.features(); ++k) {
    const auto& fa = a.schema.features[k];
    const auto& fb = b.schema.features[k];
    if (fa.name != fb.name || fa.kind != fb.kind || fa.vocab != fb.vocab) return false;
  }
  if (a.missing_ != b.missing_ || a.row_ids_ != b.row_ids_) return false;
  if (a.has_labels_ != b.has_labels_ || a.labels_ != b.labels_) return false;
  if (a.has_timestamps_ != b.has_timestamps_ || a.timestamps_ != b.timestamps_) return false;
  for (std::size_t i = 0; i < a.cells_.size(); ++i) {
    if (!a.missing_[i] && a.cells_[i] != b.cells_[i]) return false;
  }
  return true;
}

}  // namespace masktab::data
