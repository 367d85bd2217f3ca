#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "masktab/numerics/tape.hpp"

namespace masktab::encoder {

struct EncoderConfig {
  std::string preset = "base";
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t kv = 8;        // per-head key/value width
  std::size_t d_model = 32;  // equals the token width h
  std::size_t ffn_mult = 4;

  std::size_t attention_width() const { return heads * kv; }
  /// Throws ProtocolError on zero widths.
  void validate() const;
};

/// Desk-scale presets: base, S, M, L, XL.
EncoderConfig preset(std::string_view name);
std::vector<std::string> preset_names();

/// "encoder.layer<i>.*" tensors: truncated-normal(0.02) projections, zero
/// biases, unit/zero norms.
void init_encoder_params(num::ParamStore& params, const EncoderConfig& cfg, std::uint64_t seed);
/// "head.weight" (d_model × outputs) and "head.bias".
void init_head_params(num::ParamStore& params, std::size_t d_model, std::size_t outputs, std::uint64_t seed);

/// Pre-norm transformer stack over `sequences` blocks of `tokens` rows each.
/// No positional terms; full attention within each sequence.
num::Var encoder_forward(num::Tape& tape, num::ParamStore& params, const EncoderConfig& cfg, num::Var H,
                         std::size_t sequences, std::size_t tokens);

/// Mean over the tokens of each sequence: sequences × d_model.
num::Var pool(num::Var Z, std::size_t sequences, std::size_t tokens);

/// Linear head: sequences × outputs.
num::Var classify(num::Tape& tape, num::ParamStore& params, num::Var z);

/// Encoder blocks plus the classification head, embeddings excluded.
std::size_t param_count(const EncoderConfig& cfg, std::size_t outputs = 1);

}  // namespace masktab::encoder
