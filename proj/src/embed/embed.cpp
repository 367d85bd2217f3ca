#include "masktab/embed/embed.hpp"

#include <algorithm>
#include <cmath>

#include "masktab/errors.hpp"
#include "masktab/numerics/init.hpp"

namespace masktab::embed {

using data::FeatureKind;
using num::Tensor;
using num::Var;

std::vector<double> name_embedding(std::string_view name, std::size_t h, std::uint64_t seed) {
  if (name.empty()) throw ProtocolError("name_embedding: empty feature name");
  if (h == 0) throw ProtocolError("name_embedding: width must be positive");
  Rng rng = Rng::keyed({fnv1a64(name), seed, 0x6e616d65ULL});
  std::vector<double> v(h);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

Standardizer Standardizer::fit(const data::Dataset& train) {
  const std::size_t d = train.features();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.std.assign(d, 1.0);
  for (std::size_t k = 0; k < d; ++k) {
    if (train.schema.features[k].kind != FeatureKind::numerical) continue;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < train.rows(); ++r) {
      if (train.is_missing(r, k)) continue;
      sum += train.value(r, k);
      ++n;
    }
    if (n == 0) continue;
    const double mu = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) {
      if (!train.is_missing(r, k)) ss += (train.value(r, k) - mu) * (train.value(r, k) - mu);
    }
    s.mean[k] = mu;
    s.std[k] = std::max(kStdFloor, std::sqrt(ss / static_cast<double>(n)));
  }
  return s;
}

std::string to_string(MaskMode mode) { return mode == MaskMode::shared ? "shared" : "feature_specific"; }

MaskMode parse_mask_mode(std::string_view text) {
  if (text == "shared") return MaskMode::shared;
  if (text == "feature_specific") return MaskMode::feature_specific;
  throw ProtocolError("unknown mask mode '" + std::string(text) + "'");
}

Embedder::Embedder(data::FeatureSchema schema, EmbedConfig config, Standardizer standardizer)
    : schema_(std::move(schema)), config_(config), standardizer_(std::move(standardizer)) {
  schema_.validate();
  const std::size_t d = schema_.size();
  if (d == 0) throw ProtocolError("embedder: schema has no features");
  if (config_.h == 0) throw ProtocolError("embedder: width must be positive");
  if (standardizer_.mean.size() != d || standardizer_.std.size() != d) {
    throw DimensionError("embedder: standardizer does not match the schema");
  }
  names_ = Tensor({d, config_.h});
  num_slot_.assign(d, 0);
  cat_offset_.assign(d, 0);
  for (std::size_t k = 0; k < d; ++k) {
    const auto e = name_embedding(schema_.features[k].name, config_.h, config_.name_seed);
    std::copy(e.begin(), e.end(), names_.values.begin() + static_cast<std::ptrdiff_t>(k * config_.h));
    if (schema_.features[k].kind == FeatureKind::numerical) {
      num_slot_[k] = num_count_++;
    } else {
      cat_offset_[k] = cat_rows_;
      cat_rows_ += schema_.features[k].vocab.size();
    }
  }
}

void Embedder::init_params(num::ParamStore& params, std::uint64_t seed) const {
  const std::size_t h = config_.h;
  // Value-side vectors start at the same scale as the unit-norm name vectors.
  const double sd = 1.0 / std::sqrt(static_cast<double>(h));
  if (num_count_ > 0) {
    Rng rng = num::param_rng(seed, "embed.num.weight");
    params.add("embed.num.weight", num::normal({num_count_, h}, sd, rng));
    params.add("embed.num.bias", Tensor({num_count_, h}));
  }
  if (cat_rows_ > 0) {
    Rng rng = num::param_rng(seed, "embed.cat.table");
    params.add("embed.cat.table", num::normal({cat_rows_, h}, sd, rng));
  }
  Rng rng = num::param_rng(seed, "embed.mask");
  Tensor m = num::normal({1, h}, sd, rng);
  if (config_.mask_mode == MaskMode::shared) {
    params.add("embed.mask", std::move(m));
  } else {
    Tensor per({d(), h});
    for (std::size_t k = 0; k < d(); ++k) std::copy(m.values.begin(), m.values.end(), per.values.begin() + static_cast<std::ptrdiff_t>(k * h));
    params.add("embed.mask.per_feature", std::move(per));
  }
  params.add("embed.ln.gamma", Tensor({h}, 1.0));
  params.add("embed.ln.beta", Tensor({h}));
}

std::vector<double> Embedder::mask_vector(const num::ParamStore& params, std::size_t k) const {
  const std::size_t h = config_.h;
  if (config_.mask_mode == MaskMode::shared) return params.at("embed.mask").values;
  const auto& t = params.at("embed.mask.per_feature").values;
  return {t.begin() + static_cast<std::ptrdiff_t>(k * h), t.begin() + static_cast<std::ptrdiff_t>((k + 1) * h)};
}

namespace {

std::size_t category_of(const data::FeatureSpec& spec, double v) {
  if (!(v >= 0.0) || v >= static_cast<double>(spec.vocab.size()) || v != std::floor(v)) {
    throw EncodingError("category index " + std::to_string(v) + " outside the vocabulary of '" + spec.name + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<double> Embedder::encode_value(const num::ParamStore& params, std::size_t k,
                                           std::optional<double> cell, bool masked) const {
  if (k >= d()) throw DimensionError("encode_value: feature index out of range");
  if (masked && !cell) throw ProtocolError("encode_value: a missing cell cannot be masked");
  if (masked || !cell) return mask_vector(params, k);
  const std::size_t h = config_.h;
  const auto& spec = schema_.features[k];
  std::vector<double> out(h);
  if (spec.kind == FeatureKind::numerical) {
    const double s = standardizer_.apply(k, *cell);
    const auto& w = params.at("embed.num.weight").values;
    const auto& b = params.at("embed.num.bias").values;
    const std::size_t base = num_slot_[k] * h;
    for (std::size_t j = 0; j < h; ++j) out[j] = w[base + j] * s + b[base + j];
  } else {
    const std::size_t row = cat_offset_[k] + category_of(spec, *cell);
    const auto& t = params.at("embed.cat.table").values;
    std::copy(t.begin() + static_cast<std::ptrdiff_t>(row * h), t.begin() + static_cast<std::ptrdiff_t>((row + 1) * h),
              out.begin());
  }
  return out;
}

TokenMatrix Embedder::tokenize(num::Tape& tape, num::ParamStore& params, const data::Dataset& ds,
                               std::span<const std::size_t> rows,
                               std::span<const std::vector<std::size_t>> masks) const {
  if (ds.features() != d()) throw DimensionError("tokenize: dataset width does not match the schema");
  if (!masks.empty() && masks.size() != rows.size()) throw DimensionError("tokenize: one mask set per row required");
  const std::size_t n = rows.size(), h = config_.h, dd = d();
  TokenMatrix out;
  out.rows = n;
  out.d = dd;
  out.masked.resize(n);
  out.missing.resize(n);

  std::vector<std::size_t> num_slot, cat_row, mask_row;
  std::vector<double> num_val;
  // Source position of every token within concat(numeric, categorical, mask).
  std::vector<std::size_t> kind(n * dd), local(n * dd);
  std::vector<char> is_masked(dd, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = rows[i];
    std::fill(is_masked.begin(), is_masked.end(), 0);
    if (!masks.empty()) {
      for (const std::size_t k : masks[i]) {
        if (k >= dd) throw DimensionError("tokenize: mask index out of range");
        if (ds.is_missing(r, k)) {
          throw ProtocolError("tokenize: mask set of row " + std::to_string(ds.row_id(r)) + " includes a missing cell");
        }
        is_masked[k] = 1;
      }
    }
    for (std::size_t k = 0; k < dd; ++k) {
      const std::size_t t = i * dd + k;
      const bool missing = ds.is_missing(r, k);
      if (is_masked[k] || missing) {
        (is_masked[k] ? out.masked : out.missing)[i].push_back(k);
        kind[t] = 2;
        local[t] = mask_row.size();
        mask_row.push_back(config_.mask_mode == MaskMode::shared ? 0 : k);
      } else if (schema_.features[k].kind == FeatureKind::numerical) {
        kind[t] = 0;
        local[t] = num_slot.size();
        num_slot.push_back(num_slot_[k]);
        num_val.push_back(standardizer_.apply(k, ds.value(r, k)));
      } else {
        kind[t] = 1;
        local[t] = cat_row.size();
        cat_row.push_back(cat_offset_[k] + category_of(schema_.features[k], ds.value(r, k)));
      }
    }
  }

  std::vector<Var> parts;
  std::size_t base[3] = {0, 0, 0};
  if (!num_slot.empty()) {
    Var w = num::gather_rows(tape.param(params.at("embed.num.weight")), num_slot);
    Var b = num::gather_rows(tape.param(params.at("embed.num.bias")), num_slot);
    Var s = tape.constant(Tensor({num_val.size()}, num_val));
    parts.push_back(num::add(num::scale_rows(w, s), b));
  }
  base[1] = num_slot.size();
  if (!cat_row.empty()) parts.push_back(num::gather_rows(tape.param(params.at("embed.cat.table")), cat_row));
  base[2] = base[1] + cat_row.size();
  if (!mask_row.empty()) {
    const char* name = config_.mask_mode == MaskMode::shared ? "embed.mask" : "embed.mask.per_feature";
    parts.push_back(num::gather_rows(tape.param(params.at(name)), mask_row));
  }
  std::vector<std::size_t> order(n * dd);
  for (std::size_t t = 0; t < n * dd; ++t) order[t] = base[kind[t]] + local[t];
  Var values = num::gather_rows(parts.size() == 1 ? parts[0] : num::concat_rows(parts), order);

  Tensor name_rows({n * dd, h});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(names_.values.begin(), names_.values.end(), name_rows.values.begin() + static_cast<std::ptrdiff_t>(i * dd * h));
  }
  Var pre = num::add(tape.constant(std::move(name_rows)), values);
  out.H = num::layer_norm(pre, tape.param(params.at("embed.ln.gamma")), tape.param(params.at("embed.ln.beta")));
  return out;
}

double instance_missing_ratio(const data::Dataset& ds, std::size_t row) {
  std::size_t missing = 0;
  for (std::size_t k = 0; k < ds.features(); ++k) missing += ds.is_missing(row, k) ? 1 : 0;
  return ds.features() == 0 ? 0.0 : static_cast<double>(missing) / static_cast<double>(ds.features());
}

double adaptive_mask_rate(double eta, double eta_max, double r_max, double alpha_mask) {
  if (!(r_max >= 0.0 && r_max <= 1.0)) throw ProtocolError("adaptive_mask_rate: r_max must lie in [0, 1]");
  if (!(alpha_mask > 0.0)) throw ProtocolError("adaptive_mask_rate: alpha_mask must be positive");
  if (!(eta >= 0.0) || !(eta_max <= 1.0)) throw ProtocolError("adaptive_mask_rate: ratios must lie in [0, 1]");
  if (eta > eta_max) throw ProtocolError("adaptive_mask_rate: eta exceeds eta_max");
  if (eta_max == 0.0) return r_max;
  return r_max * std::pow(1.0 - eta / eta_max, alpha_mask);
}

std::vector<std::size_t> sample_mask(std::span<const std::size_t> observed, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ProtocolError("sample_mask: rate must lie in [0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(observed.size())));
  std::vector<std::size_t> pool(observed.begin(), observed.end());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> observed_features(const data::Dataset& ds, std::size_t row) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < ds.features(); ++k) {
    if (!ds.is_missing(row, k)) out.push_back(k);
  }
  return out;
}

}  // namespace masktab::embed
