#include "masktab/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "masktab/errors.hpp"
#include "masktab/numerics/functions.hpp"
#include "masktab/random.hpp"

namespace masktab::data {

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& what) { throw ProtocolError("generator: " + what); };
  if (d_num + d_cat == 0) fail("at least one feature is required");
  if (n_labeled == 0) fail("n_labeled must be positive");
  if (!(kappa >= 0.0 && kappa <= 1.0)) fail("kappa must lie in [0, 1]");
  if (!(drift >= 0.0) || !std::isfinite(drift)) fail("drift must be a finite non-negative number");
  if (months == 0) fail("months must be positive");
  if (start_month < 1 || start_month > 12) fail("start_month must lie in 1..12");
  if (unlabeled_months == 0 || unlabeled_months > months) fail("unlabeled_months must lie in 1..months");
  if (latent_dim == 0) fail("latent_dim must be positive");
  if (!(base_missing >= 0.0 && base_missing < 1.0)) fail("base_missing must lie in [0, 1)");
  if (!(mnar_fraction >= 0.0 && mnar_fraction <= 1.0)) fail("mnar_fraction must lie in [0, 1]");
  if (!(mnar_scale >= 0.0) || !std::isfinite(mnar_scale)) fail("mnar_scale must be non-negative");
  if (!(noise > 0.0) || !std::isfinite(noise)) fail("noise must be positive");
  if (d_cat > 0 && cat_vocab < 2) fail("cat_vocab must be at least 2");
  if (!(rectified_fraction >= 0.0 && rectified_fraction <= 1.0)) fail("rectified_fraction must lie in [0, 1]");
  if (!(label_scale >= 0.0) || !std::isfinite(label_scale)) fail("label_scale must be non-negative");
}

namespace {

// Standard normal quantile by bisection on the CDF; only used for a handful
// of category thresholds.
double normal_quantile(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
    (cdf < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct FeatureModel {
  std::vector<double> loading;  // latent_dim
  double offset = 0.0;
  double scale = 1.0;
  bool mnar = false;
  bool rectified = false;
  double mnar_sign = 1.0;
  std::vector<double> thresholds;  // categorical only, ascending
};

struct Process {
  std::vector<FeatureModel> features;
  std::vector<double> label_weights;  // unit norm
  double base_logit = 0.0;
};

Process build_process(const GeneratorConfig& cfg, std::uint64_t seed) {
  Rng rng = Rng::keyed({seed, 0x5eedULL, 1});
  const std::size_t d = cfg.d_num + cfg.d_cat;
  const std::size_t q = cfg.latent_dim;
  Process p;
  p.base_logit = std::log(cfg.base_missing / (1.0 - cfg.base_missing));
  if (cfg.base_missing == 0.0) p.base_logit = -std::numeric_limits<double>::infinity();

  p.label_weights.resize(q);
  double norm = 0.0;
  for (auto& w : p.label_weights) {
    w = rng.uniform(0.5, 1.5);
    norm += w * w;
  }
  for (auto& w : p.label_weights) w /= std::sqrt(norm);

  // Each feature loads mainly on one latent factor; the grouping by factor
  // gives reconstruction heads structure to specialise on.
  p.features.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    auto& f = p.features[k];
    f.loading.assign(q, 0.0);
    for (std::size_t j = 0; j < q; ++j) f.loading[j] = rng.normal(0.0, 0.2);
    f.loading[k % q] = rng.uniform(0.7, 1.3);
    f.scale = rng.uniform(0.5, 2.0);
    f.offset = rng.uniform(-0.3, 0.3) * f.scale;
    f.mnar_sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
  }
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const auto n_mnar = static_cast<std::size_t>(std::llround(cfg.mnar_fraction * static_cast<double>(d)));
  for (std::size_t i = 0; i < n_mnar; ++i) p.features[order[i]].mnar = true;

  const auto n_rect = static_cast<std::size_t>(std::llround(cfg.rectified_fraction * static_cast<double>(cfg.d_num)));
  for (std::size_t k = 0; k < n_rect; ++k) p.features[k].rectified = true;

  for (std::size_t k = cfg.d_num; k < d; ++k) {
    auto& f = p.features[k];
    double var = cfg.noise * cfg.noise;
    for (const double a : f.loading) var += a * a;
    for (std::size_t c = 1; c < cfg.cat_vocab; ++c) {
      f.thresholds.push_back(std::sqrt(var) * normal_quantile(static_cast<double>(c) / static_cast<double>(cfg.cat_vocab)));
    }
  }
  return p;
}

FeatureSchema make_schema(const GeneratorConfig& cfg) {
  FeatureSchema schema;
  char name[32];
  for (std::size_t k = 0; k < cfg.d_num; ++k) {
    std::snprintf(name, sizeof(name), "num_%02zu", k);
    schema.features.push_back({name, FeatureKind::numerical, {}});
  }
  for (std::size_t k = 0; k < cfg.d_cat; ++k) {
    std::snprintf(name, sizeof(name), "cat_%02zu", k);
    FeatureSpec spec{name, FeatureKind::categorical, {}};
    for (std::size_t c = 0; c < cfg.cat_vocab; ++c) spec.vocab.push_back("c" + std::to_string(c));
    schema.features.push_back(std::move(spec));
  }
  schema.label = LabelSpec{"y", LabelKind::binary, 0};
  schema.timestamp = "date";
  return schema;
}

Date month_date(const GeneratorConfig& cfg, std::size_t month_offset, Rng& rng) {
  const int index = cfg.start_year * 12 + (cfg.start_month - 1) + static_cast<int>(month_offset);
  Date d;
  d.year = index / 12;
  d.month = index % 12 + 1;
  d.day = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(days_in_month(d.year, d.month))));
  return d;
}

void generate_row(const GeneratorConfig& cfg, const Process& p, Rng& rng, std::size_t month_offset,
                  std::vector<std::optional<double>>& cells, double& label) {
  const std::size_t q = cfg.latent_dim;
  std::vector<double> u(q);
  for (auto& v : u) v = rng.normal();
  double score = 0.0;
  for (std::size_t j = 0; j < q; ++j) score += p.label_weights[j] * u[j];

  const double span = cfg.months > 1 ? static_cast<double>(cfg.months - 1) : 1.0;
  const double drift = cfg.months > 1 ? cfg.drift * (2.0 * static_cast<double>(month_offset) / span - 1.0) : 0.0;
  label = rng.bernoulli(num::sigmoid(cfg.label_scale * score + drift)) ? 1.0 : 0.0;

  for (std::size_t k = 0; k < p.features.size(); ++k) {
    const auto& f = p.features[k];
    double x = rng.normal(0.0, cfg.noise);
    for (std::size_t j = 0; j < q; ++j) x += f.loading[j] * u[j];
    double logit = p.base_logit;
    if (f.mnar) logit += cfg.kappa * cfg.mnar_scale * f.mnar_sign * score;
    const double draw = rng.uniform();
    if (draw < num::sigmoid(logit)) {
      cells[k].reset();
    } else if (k < cfg.d_num) {
      cells[k] = f.rectified ? f.scale * std::max(0.0, x) : f.offset + f.scale * x;
    } else {
      const auto c = static_cast<std::size_t>(std::upper_bound(f.thresholds.begin(), f.thresholds.end(), x) -
                                              f.thresholds.begin());
      cells[k] = static_cast<double>(c);
    }
  }
}

}  // namespace

SyntheticData synth_generate(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Process process = build_process(cfg, seed);
  const FeatureSchema schema = make_schema(cfg);
  SyntheticData out{Dataset(schema), Dataset(schema)};
  std::vector<std::optional<double>> cells(schema.size());
  double label = 0.0;
  for (std::size_t r = 0; r < cfg.n_labeled; ++r) {
    Rng rng = Rng::keyed({seed, 0x5eedULL, 2, r});
    const std::size_t month = static_cast<std::size_t>(rng.below(cfg.months));
    const Date date = month_date(cfg, month, rng);
    generate_row(cfg, process, rng, month, cells, label);
    out.labeled.append(cells, label, date, static_cast<std::int64_t>(r));
  }
  for (std::size_t r = 0; r < cfg.n_unlabeled; ++r) {
    Rng rng = Rng::keyed({seed, 0x5eedULL, 3, r});
    const std::size_t month = static_cast<std::size_t>(rng.below(cfg.unlabeled_months));
    const Date date = month_date(cfg, month, rng);
    generate_row(cfg, process, rng, month, cells, label);
    out.unlabeled.append(cells, std::nullopt, date, static_cast<std::int64_t>(r));
  }
  return out;
}

}  // namespace masktab::data
