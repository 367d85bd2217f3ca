#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "masktab/data/dataset.hpp"
#include "masktab/embed/embed.hpp"
#include "masktab/encoder/encoder.hpp"
#include "masktab/moe/moe.hpp"
#include "masktab/objectives/losses.hpp"

namespace masktab::objectives {

/// Everything needed to rebuild a model's parameter layout.
struct ModelSpec {
  data::FeatureSchema schema;  // must carry a label spec
  embed::EmbedConfig embed;
  embed::Standardizer standardizer;
  encoder::EncoderConfig encoder;
  std::optional<moe::MoEConfig> moe;
  std::size_t align_width = 0;  // teacher width d_t; 0 = no alignment head
  std::uint64_t init_seed = 0;

  std::size_t outputs() const;
  void validate() const;
  std::string to_json_text() const;
  static ModelSpec from_json_text(const std::string& text);
};

/// Classification head width for a label spec (classes must be known for
/// multiclass labels).
std::size_t head_outputs(const data::LabelSpec& label);

/// Spec for a dataset: standardization from `train`, token width from the
/// encoder, multiclass class count inferred from `train` when unset.
ModelSpec make_model_spec(const data::Dataset& train, const encoder::EncoderConfig& enc, embed::MaskMode mask_mode,
                          std::optional<moe::MoEConfig> moe, std::size_t align_width, std::uint64_t seed);

class Model {
 public:
  ModelSpec spec;
  num::ParamStore params;
  embed::Embedder embedder;

  /// Fresh parameters from spec.init_seed.
  static Model create(ModelSpec spec);
  /// Adopts existing parameters; every expected tensor must be present with
  /// the expected shape.
  static Model assemble(ModelSpec spec, num::ParamStore params);
};

struct Forward {
  embed::TokenMatrix tokens;
  num::Var Z;       // rows·d × h
  num::Var z;       // rows × h
  num::Var logits;  // rows × outputs
};

/// Tokenize, encode, pool and classify. `masks` empty = natural path.
Forward forward(num::Tape& tape, Model& model, const data::Dataset& ds, std::span<const std::size_t> rows,
                std::span<const std::vector<std::size_t>> masks = {});

/// Worker threads for chunked inference (default 1). Results do not depend
/// on the thread count.
void set_inference_threads(std::size_t n);
std::size_t inference_threads();

/// Natural-path logits for every listed row, computed in chunks.
num::Tensor predict_logits(Model& model, const data::Dataset& ds, std::span<const std::size_t> rows);
/// Natural-path pooled representations.
num::Tensor embed_rows(Model& model, const data::Dataset& ds, std::span<const std::size_t> rows);

/// Keys of the per-row masking stream.
struct MaskContext {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t stream = 0;
  double eta_max = 0.0;
  std::optional<double> forced_rate;  // overrides the adaptive rate
};

/// One adaptive mask set per row, drawn from streams keyed by
/// (seed, step, row id, stream).
std::vector<std::vector<std::size_t>> sample_masks(const data::Dataset& ds, std::span<const std::size_t> rows,
                                                   const HybridConfig& cfg, const MaskContext& ctx);

struct TwinOutput {
  num::Var combined;
  num::Var l_mlm;       // absent (tape == nullptr) when the masked path was skipped
  num::Var l_ce_recon;  // absent when not computed
  num::Var l_ce_cls;
  num::Var ce_mix;      // w·l_ce_recon + (1−w)·l_ce_cls
  num::Var z_natural;   // pooled natural-path representation, when computed
  LossBreakdown values;
};

struct TwinOptions {
  bool all_paths = false;     // compute every term even when its weight is 0
  bool need_natural = false;  // always run the natural path
};

/// Twin-path losses for a labeled batch, averaged over rows: masked path
/// (MLM + CE on the masked representation) and natural path (CE), sharing
/// all parameters.
TwinOutput twin_forward(num::Tape& tape, Model& model, const data::Dataset& ds, std::span<const std::size_t> rows,
                        const HybridConfig& cfg, const MaskContext& ctx, TwinOptions options = {});

/// Mean over rows of each row's MLM loss (rows with an empty mask set count
/// as 0).
num::Var unlabeled_mlm(num::Tape& tape, Model& model, const data::Dataset& ds, std::span<const std::size_t> rows,
                       const HybridConfig& cfg, const MaskContext& ctx);

/// Plain or MoE reconstruction loss, depending on the model.
num::Var reconstruction_loss(num::Tape& tape, Model& model, num::Var Z, const MaskedTokens& tokens);

}  // namespace masktab::objectives
