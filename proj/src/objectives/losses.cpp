#include "masktab/objectives/losses.hpp"

#include "masktab/errors.hpp"
#include "masktab/numerics/init.hpp"

namespace masktab::objectives {

using num::Tensor;
using num::Var;

void HybridConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(lambda)) throw ProtocolError("hybrid: lambda must lie in [0, 1]");
  if (!unit(recon_path_ce_weight)) throw ProtocolError("hybrid: recon_path_ce_weight must lie in [0, 1]");
  if (!unit(r_max)) throw ProtocolError("hybrid: r_max must lie in [0, 1]");
  if (!(alpha_mask > 0.0)) throw ProtocolError("hybrid: alpha_mask must be positive");
}

double combine(const HybridConfig& cfg, double l_mlm, double l_ce_recon, double l_ce_cls) {
  const double w = cfg.recon_path_ce_weight;
  double ce = 0.0;
  if (w != 0.0) ce += w * l_ce_recon;
  if (w != 1.0) ce += (1.0 - w) * l_ce_cls;
  double out = 0.0;
  if (cfg.lambda != 0.0) out += cfg.lambda * l_mlm;
  if (cfg.lambda != 1.0) out += (1.0 - cfg.lambda) * ce;
  return out;
}

double hybrid_batch_loss(std::span<const double> sup_combined, std::span<const double> unsup_mlm) {
  if (sup_combined.empty() && unsup_mlm.empty()) throw ProtocolError("hybrid_batch_loss: both batches are empty");
  auto mean = [](std::span<const double> v) {
    double s = 0.0;
    for (const double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  return mean(sup_combined) + mean(unsup_mlm);
}

Var ce_loss(Var logits, std::span<const double> labels, data::LabelKind kind) {
  const auto& shape = logits.shape();
  if (shape.size() != 2 || shape[0] != labels.size()) throw DimensionError("ce_loss: one label per logit row required");
  if (labels.empty()) throw ProtocolError("ce_loss: empty batch");
  switch (kind) {
    case data::LabelKind::binary:
      if (shape[1] != 1) throw DimensionError("ce_loss: binary task expects one logit per row");
      return num::mean(num::bce_with_logits(logits, labels));
    case data::LabelKind::multiclass: {
      std::vector<std::size_t> cls(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!(labels[i] >= 0.0) || labels[i] >= static_cast<double>(shape[1]) || labels[i] != std::floor(labels[i])) {
          throw ProtocolError("ce_loss: class label out of range");
        }
        cls[i] = static_cast<std::size_t>(labels[i]);
      }
      return num::mean(num::softmax_cross_entropy(logits, cls));
    }
    case data::LabelKind::regression: {
      if (shape[1] != 1) throw DimensionError("ce_loss: regression expects one output per row");
      Var target = logits.tape->constant(Tensor(shape, std::vector<double>(labels.begin(), labels.end())));
      return num::mse(logits, target);
    }
  }
  throw ProtocolError("ce_loss: unknown task kind");
}

MaskedTokens masked_tokens(const embed::TokenMatrix& tm, const data::Dataset& ds, std::span<const std::size_t> rows,
                           const embed::Embedder& emb, double row_scale) {
  if (rows.size() != tm.rows) throw DimensionError("masked_tokens: row count mismatch");
  MaskedTokens out;
  for (std::size_t i = 0; i < tm.rows; ++i) {
    const auto& m = tm.masked[i];
    if (m.empty()) continue;
    const double w = row_scale / static_cast<double>(m.size());
    for (const std::size_t k : m) {
      out.positions.push_back(i * tm.d + k);
      double v = ds.value(rows[i], k);
      if (emb.schema().features[k].kind == data::FeatureKind::numerical) v = emb.standardizer().apply(k, v);
      out.targets.push_back({k, v});
      out.weights.push_back(w);
    }
  }
  return out;
}

Var decode_loss(num::Tape& tape, num::ParamStore& params, const embed::Embedder& emb, Var G,
                const MaskedTokens& tokens) {
  const std::size_t n = tokens.targets.size();
  if (G.shape().size() != 2 || G.shape()[0] != n || G.shape()[1] != emb.h()) {
    throw DimensionError("decode_loss: decoder output must be targets × h");
  }
  if (tokens.weights.size() != n) throw DimensionError("decode_loss: one weight per target required");
  const std::size_t h = emb.h();
  std::vector<std::size_t> num_idx, cat_idx;
  std::vector<double> num_target, num_w, cat_w;
  std::vector<num::Segment> segs;
  Tensor names;
  names.shape = {0, h};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = tokens.targets[i];
    const auto& spec = emb.schema().features.at(t.feature);
    if (spec.kind == data::FeatureKind::numerical) {
      num_idx.push_back(i);
      num_target.push_back(t.value);
      num_w.push_back(tokens.weights[i]);
      const auto& e = emb.names().values;
      names.values.insert(names.values.end(), e.begin() + static_cast<std::ptrdiff_t>(t.feature * h),
                          e.begin() + static_cast<std::ptrdiff_t>((t.feature + 1) * h));
    } else {
      cat_idx.push_back(i);
      cat_w.push_back(tokens.weights[i]);
      segs.push_back({emb.category_offset(t.feature), spec.vocab.size(), static_cast<std::size_t>(t.value)});
    }
  }
  Var total = tape.constant(Tensor(num::Shape{}, std::vector<double>{0.0}));
  if (!num_idx.empty()) {
    names.shape[0] = num_idx.size();
    Var pred = num::dot_rows(num::gather_rows(G, num_idx), tape.constant(std::move(names)));
    Var diff = num::sub(pred, tape.constant(Tensor({num_target.size()}, num_target)));
    total = num::add(total, num::weighted_sum(num::square(diff), num_w));
  }
  if (!cat_idx.empty()) {
    Var logits = num::matmul_nt(num::gather_rows(G, cat_idx), tape.param(params.at("embed.cat.table")));
    Var ce = num::segment_cross_entropy(logits, segs);
    total = num::add(total, num::weighted_sum(ce, cat_w));
  }
  return total;
}

void init_mlm_head(num::ParamStore& params, std::size_t h, std::uint64_t seed) {
  Rng rng = num::param_rng(seed, "mlm.weight");
  params.add("mlm.weight", num::truncated_normal({h, h}, 0.02, rng));
  params.add("mlm.bias", Tensor({h}));
}

Var mlm_loss(num::Tape& tape, num::ParamStore& params, const embed::Embedder& emb, Var Z, const MaskedTokens& tokens) {
  if (tokens.empty()) return tape.constant(Tensor(num::Shape{}, std::vector<double>{0.0}));
  Var zm = num::gather_rows(Z, tokens.positions);
  Var G = num::add_row(num::matmul(zm, tape.param(params.at("mlm.weight"))), tape.param(params.at("mlm.bias")));
  return decode_loss(tape, params, emb, G, tokens);
}

}  // namespace masktab::objectives
