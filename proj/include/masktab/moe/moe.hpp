#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "masktab/embed/embed.hpp"
#include "masktab/numerics/tape.hpp"
#include "masktab/objectives/losses.hpp"

namespace masktab::moe {

struct MoEConfig {
  std::size_t routed = 4;  // K_r
  std::size_t active = 2;  // K_a
  double alpha_moe = 0.5;
  double beta_moe = 0.5;

  /// Throws ProtocolError unless 1 ≤ K_a ≤ K_r and both weights are ≥ 0.
  void validate() const;
};

/// "moe.shared.*", "moe.experts.*" (all routed experts side by side) and
/// "moe.centroids" (K_r × h, unit-norm rows).
void init_moe_params(num::ParamStore& params, const MoEConfig& cfg, std::size_t h, std::uint64_t seed);

/// Indices of the `active` largest scores, ties to the lower index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t active);

/// Softmax over z·e_i, truncated to the top K_a entries without
/// renormalization. `centroids` is K_r × h row-major.
std::vector<double> route(std::span<const double> z, std::span<const double> centroids, std::size_t active);

struct Predictions {
  std::vector<double> shared;
  std::vector<double> routed;
};

/// Single-token predictions read from the parameter store.
Predictions moe_predictions(std::span<const double> z, const num::ParamStore& params, const MoEConfig& cfg);

struct MoEHeadOutput {
  num::Var shared;  // tokens × h
  num::Var routed;  // tokens × h
  num::Var gates;   // tokens × K_r
};

/// Batched head over token rows zm (tokens × h).
MoEHeadOutput moe_head(num::Tape& tape, num::ParamStore& params, const MoEConfig& cfg, num::Var zm);

struct MoELoss {
  num::Var total;
  num::Var shared;
  num::Var routed;
};

/// α·L_Shared + β·L_Routed, both through the shared type-aware decoders.
MoELoss moe_mlm_loss(num::Tape& tape, num::ParamStore& params, const embed::Embedder& emb, const MoEConfig& cfg,
                     num::Var Z, const objectives::MaskedTokens& tokens);

}  // namespace masktab::moe
