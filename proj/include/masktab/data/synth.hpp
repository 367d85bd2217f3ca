#pragma once

#include <cstdint>
#include <utility>

#include "masktab/data/dataset.hpp"

namespace masktab::data {

/// Desk-scale stand-in for an industrial credit dataset. A latent factor
/// vector u drives the features and the label; a designated subset of
/// features goes missing with a probability that depends on the label score
/// (strength kappa), so missingness itself is predictive.
struct GeneratorConfig {
  std::size_t d_num = 16;
  std::size_t d_cat = 4;
  std::size_t n_labeled = 4000;
  std::size_t n_unlabeled = 40000;
  double kappa = 1.0;           // MNAR strength in [0, 1]
  double drift = 0.5;           // label intercept swing across the covered months
  std::size_t months = 12;
  int start_year = 2024;
  int start_month = 1;
  std::size_t unlabeled_months = 6;  // unlabeled rows cover the first months only
  std::size_t latent_dim = 3;
  double base_missing = 0.3;    // missing rate of every feature at kappa = 0
  double mnar_fraction = 0.5;   // share of features with score-dependent missingness
  double mnar_scale = 3.0;      // logit slope of the missingness model at kappa = 1
  double noise = 2.0;           // feature noise standard deviation
  std::size_t cat_vocab = 4;
  double rectified_fraction = 1.0;  // share of numerical features clipped at 0 (amount-like, many exact zeros)
  double label_scale = 4.0;

  /// Throws ProtocolError on invalid sizes or out-of-range strengths.
  void validate() const;
};

struct SyntheticData {
  Dataset labeled;
  Dataset unlabeled;
};

/// Fully determined by (config, seed).
SyntheticData synth_generate(const GeneratorConfig& config, std::uint64_t seed);

}  // namespace masktab::data
