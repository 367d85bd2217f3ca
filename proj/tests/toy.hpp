#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "masktab/data/dataset.hpp"
#include "masktab/objectives/model.hpp"
#include "masktab/random.hpp"

namespace toy {

using namespace masktab;

// Two numerical and two categorical features.
inline data::FeatureSchema schema(data::LabelKind kind = data::LabelKind::binary) {
  data::FeatureSchema s;
  s.features.push_back({"income", data::FeatureKind::numerical, {}});
  s.features.push_back({"age", data::FeatureKind::numerical, {}});
  s.features.push_back({"region", data::FeatureKind::categorical, {"n", "s", "e"}});
  s.features.push_back({"channel", data::FeatureKind::categorical, {"web", "app", "branch", "phone"}});
  s.label = data::LabelSpec{"y", kind, kind == data::LabelKind::multiclass ? 3u : 0u};
  s.timestamp = "date";
  return s;
}

// Random rows with roughly `missing` of the cells absent. Labels depend on
// the first feature so training has something to learn.
inline data::Dataset dataset(std::size_t rows, std::uint64_t seed, double missing = 0.25,
                             data::LabelKind kind = data::LabelKind::binary) {
  data::Dataset ds(schema(kind));
  Rng rng(seed);
  std::vector<std::optional<double>> cells(4);
  for (std::size_t r = 0; r < rows; ++r) {
    const double x = rng.normal();
    cells[0] = 10.0 + 3.0 * x;
    cells[1] = rng.uniform(20, 70);
    cells[2] = static_cast<double>(rng.below(3));
    cells[3] = static_cast<double>(rng.below(4));
    for (auto& c : cells) {
      if (rng.uniform() < missing) c.reset();
    }
    double y = 0.0;
    switch (kind) {
      case data::LabelKind::binary: y = rng.uniform() < 1.0 / (1.0 + std::exp(-2.0 * x)) ? 1.0 : 0.0; break;
      case data::LabelKind::multiclass: y = static_cast<double>(x < -0.5 ? 0 : (x < 0.5 ? 1 : 2)); break;
      case data::LabelKind::regression: y = x + 0.1 * rng.normal(); break;
    }
    const data::Date date{2024, static_cast<int>(1 + r % 12), 1 + static_cast<int>(r % 28)};
    ds.append(cells, y, date, static_cast<std::int64_t>(r));
  }
  return ds;
}

inline encoder::EncoderConfig tiny_encoder(std::size_t layers = 1) {
  encoder::EncoderConfig c;
  c.preset = "tiny";
  c.layers = layers;
  c.heads = 2;
  c.kv = 2;
  c.d_model = 4;
  c.ffn_mult = 2;
  return c;
}

inline objectives::Model model(const data::Dataset& train, std::optional<moe::MoEConfig> moe = std::nullopt,
                               std::size_t align = 0, std::uint64_t seed = 3, std::size_t layers = 1,
                               embed::MaskMode mode = embed::MaskMode::shared) {
  return objectives::Model::create(objectives::make_model_spec(train, tiny_encoder(layers), mode, moe, align, seed));
}

// Small random perturbation of every parameter so that nothing sits at a
// symmetric initial value during gradient checks.
inline void jitter(num::ParamStore& params, std::uint64_t seed, double sd = 0.3) {
  Rng rng(seed);
  for (auto& [_, t] : params) {
    for (auto& v : t.values) v += rng.normal(0.0, sd);
  }
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace toy
