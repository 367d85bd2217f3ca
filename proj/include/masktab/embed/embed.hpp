#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "masktab/data/dataset.hpp"
#include "masktab/numerics/tape.hpp"
#include "masktab/random.hpp"

namespace masktab::embed {

/// Fixed, non-trainable unit vector per feature name, drawn from a stream
/// keyed by (name, seed).
std::vector<double> name_embedding(std::string_view name, std::size_t h, std::uint64_t seed);

/// Per-feature training-split statistics for numerical standardization.
/// Categorical entries are (0, 1) and unused.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  static constexpr double kStdFloor = 1e-6;
  static Standardizer fit(const data::Dataset& train);
  double apply(std::size_t feature, double v) const { return (v - mean[feature]) / std[feature]; }
};

enum class MaskMode { shared, feature_specific };
std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(std::string_view text);

struct EmbedConfig {
  std::size_t h = 32;
  std::uint64_t name_seed = 0;
  MaskMode mask_mode = MaskMode::shared;
};

/// Token matrix for a batch of rows: H holds rows·d tokens of width h, row
/// r's tokens at [r·d, (r+1)·d). `masked` and `missing` are per-row feature
/// index sets, disjoint by construction.
struct TokenMatrix {
  num::Var H;
  std::size_t rows = 0;
  std::size_t d = 0;
  std::vector<std::vector<std::size_t>> masked;
  std::vector<std::vector<std::size_t>> missing;
};

/// Name table, value encoders, mask embedding and the shared token
/// LayerNorm. Trainable tensors live in a ParamStore under "embed.*".
class Embedder {
 public:
  Embedder() = default;
  Embedder(data::FeatureSchema schema, EmbedConfig config, Standardizer standardizer);

  const data::FeatureSchema& schema() const { return schema_; }
  const EmbedConfig& config() const { return config_; }
  const Standardizer& standardizer() const { return standardizer_; }
  std::size_t d() const { return schema_.size(); }
  std::size_t h() const { return config_.h; }

  /// d × h, row k = e_name_k.
  const num::Tensor& names() const { return names_; }
  /// Offset of feature k's block in the concatenated category table.
  std::size_t category_offset(std::size_t k) const { return cat_offset_[k]; }
  std::size_t category_rows() const { return cat_rows_; }
  std::size_t numeric_slot(std::size_t k) const { return num_slot_[k]; }

  void init_params(num::ParamStore& params, std::uint64_t seed) const;

  /// e_[MASK] for feature k (also e_[MISS]).
  std::vector<double> mask_vector(const num::ParamStore& params, std::size_t k) const;

  /// φ(v_k) for a single cell. Throws ProtocolError when `masked` is set on
  /// a missing cell and EncodingError for out-of-vocabulary categories.
  std::vector<double> encode_value(const num::ParamStore& params, std::size_t k, std::optional<double> cell,
                                   bool masked) const;

  /// Tokenizes ds rows `rows`; `masks` is empty (no masking) or holds one
  /// sorted index set per row, each a subset of that row's observed cells.
  TokenMatrix tokenize(num::Tape& tape, num::ParamStore& params, const data::Dataset& ds,
                       std::span<const std::size_t> rows,
                       std::span<const std::vector<std::size_t>> masks = {}) const;

 private:
  data::FeatureSchema schema_;
  EmbedConfig config_;
  Standardizer standardizer_;
  num::Tensor names_;
  std::vector<std::size_t> num_slot_;
  std::vector<std::size_t> cat_offset_;
  std::size_t num_count_ = 0;
  std::size_t cat_rows_ = 0;
};

/// Share of missing cells in one row.
double instance_missing_ratio(const data::Dataset& ds, std::size_t row);

/// r_max·(1 − eta/eta_max)^alpha_mask, and r_max when eta_max is 0.
/// Throws ProtocolError when eta > eta_max or arguments are out of range.
double adaptive_mask_rate(double eta, double eta_max, double r_max, double alpha_mask);

/// round(rate·|observed|) indices drawn uniformly without replacement from
/// `observed`, returned sorted.
std::vector<std::size_t> sample_mask(std::span<const std::size_t> observed, double rate, Rng& rng);

/// Observed feature indices of a row.
std::vector<std::size_t> observed_features(const data::Dataset& ds, std::size_t row);

}  // namespace masktab::embed
