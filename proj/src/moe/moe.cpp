#include "masktab/moe/moe.hpp"

#include <algorithm>
#include <numeric>

#include "masktab/errors.hpp"
#include "masktab/numerics/functions.hpp"
#include "masktab/numerics/init.hpp"

namespace masktab::moe {

using num::Tensor;
using num::Var;

void MoEConfig::validate() const {
  if (routed < 1) throw ProtocolError("moe: K_r must be at least 1");
  if (active < 1 || active > routed) throw ProtocolError("moe: K_a must lie in [1, K_r]");
  if (!(alpha_moe >= 0.0) || !(beta_moe >= 0.0)) throw ProtocolError("moe: loss weights must be non-negative");
}

void init_moe_params(num::ParamStore& params, const MoEConfig& cfg, std::size_t h, std::uint64_t seed) {
  cfg.validate();
  Rng rs = num::param_rng(seed, "moe.shared.weight");
  params.add("moe.shared.weight", num::truncated_normal({h, h}, 0.02, rs));
  params.add("moe.shared.bias", Tensor({h}));
  Rng re = num::param_rng(seed, "moe.experts.weight");
  params.add("moe.experts.weight", num::truncated_normal({h, cfg.routed * h}, 0.02, re));
  params.add("moe.experts.bias", Tensor({cfg.routed * h}));
  Tensor c({cfg.routed, h});
  for (std::size_t i = 0; i < cfg.routed; ++i) {
    const auto e = embed::name_embedding("moe.centroid." + std::to_string(i), h, seed);
    std::copy(e.begin(), e.end(), c.values.begin() + static_cast<std::ptrdiff_t>(i * h));
  }
  num::quantize_f32(c);
  params.add("moe.centroids", std::move(c));
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t active) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(active, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> route(std::span<const double> z, std::span<const double> centroids, std::size_t active) {
  const std::size_t h = z.size();
  if (h == 0 || centroids.size() % h != 0) throw DimensionError("route: centroid width does not match the token");
  const std::size_t kr = centroids.size() / h;
  if (active < 1 || active > kr) throw ProtocolError("route: K_a must lie in [1, K_r]");
  std::vector<double> logits(kr, 0.0);
  for (std::size_t i = 0; i < kr; ++i) {
    for (std::size_t j = 0; j < h; ++j) logits[i] += z[j] * centroids[i * h + j];
  }
  const auto s = num::softmax(logits);
  std::vector<double> g(kr, 0.0);
  for (const std::size_t i : top_k(s, active)) g[i] = s[i];
  return g;
}

Predictions moe_predictions(std::span<const double> z, const num::ParamStore& params, const MoEConfig& cfg) {
  cfg.validate();
  const std::size_t h = z.size();
  const auto& c = params.at("moe.centroids").values;
  if (c.size() != cfg.routed * h) throw DimensionError("moe_predictions: width mismatch");
  const auto g = route(z, c, cfg.active);
  auto affine = [&](const std::vector<double>& w, const std::vector<double>& b, std::size_t stride, std::size_t col) {
    std::vector<double> out(h);
    for (std::size_t j = 0; j < h; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < h; ++i) acc += z[i] * w[i * stride + col + j];
      out[j] = acc + b[col + j];
    }
    return out;
  };
  Predictions p;
  p.shared = affine(params.at("moe.shared.weight").values, params.at("moe.shared.bias").values, h, 0);
  p.routed.assign(h, 0.0);
  const auto& we = params.at("moe.experts.weight").values;
  const auto& be = params.at("moe.experts.bias").values;
  for (std::size_t e = 0; e < cfg.routed; ++e) {
    if (g[e] == 0.0) continue;
    const auto out = affine(we, be, cfg.routed * h, e * h);
    for (std::size_t j = 0; j < h; ++j) p.routed[j] += g[e] * out[j];
  }
  return p;
}

MoEHeadOutput moe_head(num::Tape& tape, num::ParamStore& params, const MoEConfig& cfg, Var zm) {
  cfg.validate();
  auto affine = [&](const char* name, Var x) {
    const std::string base(name);
    return num::add_row(num::matmul(x, tape.param(params.at(base + ".weight"))), tape.param(params.at(base + ".bias")));
  };
  MoEHeadOutput out;
  out.shared = affine("moe.shared", zm);
  Var probs = num::softmax_rows(num::matmul_nt(zm, tape.param(params.at("moe.centroids"))));
  const Tensor& pv = probs.value();
  const std::size_t n = pv.rows(), kr = cfg.routed;
  Tensor keep({n, kr});
  for (std::size_t t = 0; t < n; ++t) {
    const std::span<const double> row(pv.values.data() + t * kr, kr);
    for (const std::size_t i : top_k(row, cfg.active)) keep[t * kr + i] = 1.0;
  }
  out.gates = num::mul(probs, tape.constant(std::move(keep)));
  // Unselected experts carry gate 0, so they add exact zeros and receive no gradient.
  out.routed = num::gated_mixture(affine("moe.experts", zm), out.gates, kr);
  return out;
}

MoELoss moe_mlm_loss(num::Tape& tape, num::ParamStore& params, const embed::Embedder& emb, const MoEConfig& cfg, Var Z,
                     const objectives::MaskedTokens& tokens) {
  if (tokens.empty()) {
    Var zero = tape.constant(Tensor(num::Shape{}, std::vector<double>{0.0}));
    return {zero, zero, zero};
  }
  const auto head = moe_head(tape, params, cfg, num::gather_rows(Z, tokens.positions));
  MoELoss out;
  out.shared = objectives::decode_loss(tape, params, emb, head.shared, tokens);
  out.routed = objectives::decode_loss(tape, params, emb, head.routed, tokens);
  out.total = num::add(num::scale(out.shared, cfg.alpha_moe), num::scale(out.routed, cfg.beta_moe));
  return out;
}

}  // namespace masktab::moe
