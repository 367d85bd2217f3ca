#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "masktab/data/dataset.hpp"
#include "masktab/embed/embed.hpp"
#include "masktab/numerics/tape.hpp"

namespace masktab::objectives {

struct HybridConfig {
  double lambda = 0.5;                // MLM weight in the supervised mix
  double recon_path_ce_weight = 0.5;  // share of CE taken from the masked path
  double r_max = 0.3;
  double alpha_mask = 1.0;

  /// Throws ProtocolError when a weight leaves its range.
  void validate() const;
};

inline constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

/// Per-term losses of one step or row. Terms that were not computed are NaN.
struct LossBreakdown {
  double l_mlm = kAbsent;
  double l_ce_recon = kAbsent;
  double l_ce_cls = kAbsent;
  double l_align = kAbsent;
  double combined = kAbsent;
};

/// λ·mlm + (1−λ)·(w·ce_recon + (1−w)·ce_cls). Terms with a zero coefficient
/// are dropped, so they may be NaN.
double combine(const HybridConfig& cfg, double l_mlm, double l_ce_recon, double l_ce_cls);

/// Mean of the supervised combined losses plus mean of the unlabeled MLM
/// losses; an empty side contributes 0. Throws ProtocolError when both are
/// empty.
double hybrid_batch_loss(std::span<const double> sup_combined, std::span<const double> unsup_mlm);

/// Mean task loss over rows: sigmoid BCE (binary, logits m×1), softmax CE
/// (multiclass, logits m×C, labels are class indices) or squared error
/// (regression, m×1).
num::Var ce_loss(num::Var logits, std::span<const double> labels, data::LabelKind kind);

/// One reconstruction target: the standardized value of a numerical feature
/// or the category index of a categorical one.
struct MlmTarget {
  std::size_t feature = 0;
  double value = 0.0;
};

/// Masked tokens of a batch, with per-term weights that realise the mean
/// over each row's mask set and then the mean over rows.
struct MaskedTokens {
  std::vector<std::size_t> positions;  // rows of Z
  std::vector<MlmTarget> targets;
  std::vector<double> weights;
  bool empty() const { return positions.empty(); }
};

/// Collects the masked tokens of `tm` (built from ds rows `rows`). Each
/// row's terms get weight row_scale/|M_r|.
MaskedTokens masked_tokens(const embed::TokenMatrix& tm, const data::Dataset& ds, std::span<const std::size_t> rows,
                           const embed::Embedder& emb, double row_scale);

/// Σ weights·ℓ over decoder outputs G (one row per target). Numerical
/// targets: squared error of dot(G_i, e_name_k) against the standardized
/// value. Categorical targets: cross-entropy over dot products of G_i with
/// feature k's rows of the category table. A constant 0 when empty.
num::Var decode_loss(num::Tape& tape, num::ParamStore& params, const embed::Embedder& emb, num::Var G,
                     const MaskedTokens& tokens);

/// "mlm.weight" / "mlm.bias": the shared affine reconstruction head g.
void init_mlm_head(num::ParamStore& params, std::size_t h, std::uint64_t seed);

/// Plain-head masked reconstruction loss on encoder output Z.
num::Var mlm_loss(num::Tape& tape, num::ParamStore& params, const embed::Embedder& emb, num::Var Z,
                  const MaskedTokens& tokens);

}  // namespace masktab::objectives
