#include "masktab/encoder/encoder.hpp"

#include "masktab/errors.hpp"
#include "masktab/numerics/init.hpp"

namespace masktab::encoder {

using num::Tensor;
using num::Var;

void EncoderConfig::validate() const {
  if (d_model == 0) throw ProtocolError("encoder: d_model must be positive");
  if (layers > 0 && (heads == 0 || kv == 0 || ffn_mult == 0)) {
    throw ProtocolError("encoder: heads, kv and ffn_mult must be positive");
  }
}

EncoderConfig preset(std::string_view name) {
  auto make = [&](std::size_t layers, std::size_t heads, std::size_t kv, std::size_t d) {
    return EncoderConfig{std::string(name), layers, heads, kv, d, 4};
  };
  if (name == "base") return make(2, 4, 8, 32);
  if (name == "S") return make(2, 6, 8, 48);
  if (name == "M") return make(3, 6, 8, 48);
  if (name == "L") return make(3, 8, 8, 64);
  if (name == "XL") return make(4, 8, 8, 64);
  throw ProtocolError("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() { return {"base", "S", "M", "L", "XL"}; }

namespace {

std::string layer_name(std::size_t i, const char* leaf) {
  return "encoder.layer" + std::to_string(i) + "." + leaf;
}

void add_projection(num::ParamStore& params, const std::string& name, std::size_t in, std::size_t out,
                    std::uint64_t seed) {
  Rng rng = num::param_rng(seed, name + ".weight");
  params.add(name + ".weight", num::truncated_normal({in, out}, 0.02, rng));
  params.add(name + ".bias", Tensor({out}));
}

Var affine(num::Tape& tape, num::ParamStore& params, const std::string& name, Var x) {
  return num::add_row(num::matmul(x, tape.param(params.at(name + ".weight"))), tape.param(params.at(name + ".bias")));
}

}  // namespace

void init_encoder_params(num::ParamStore& params, const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t h = cfg.d_model, a = cfg.attention_width(), f = cfg.ffn_mult * cfg.d_model;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    for (const char* ln : {"ln1", "ln2"}) {
      params.add(layer_name(i, ln) + std::string(".gamma"), Tensor({h}, 1.0));
      params.add(layer_name(i, ln) + std::string(".beta"), Tensor({h}));
    }
    add_projection(params, layer_name(i, "attn.q"), h, a, seed);
    add_projection(params, layer_name(i, "attn.k"), h, a, seed);
    add_projection(params, layer_name(i, "attn.v"), h, a, seed);
    add_projection(params, layer_name(i, "attn.o"), a, h, seed);
    add_projection(params, layer_name(i, "ffn.in"), h, f, seed);
    add_projection(params, layer_name(i, "ffn.out"), f, h, seed);
  }
}

void init_head_params(num::ParamStore& params, std::size_t d_model, std::size_t outputs, std::uint64_t seed) {
  if (outputs == 0) throw ProtocolError("classification head needs at least one output");
  add_projection(params, "head", d_model, outputs, seed);
}

Var encoder_forward(num::Tape& tape, num::ParamStore& params, const EncoderConfig& cfg, Var H,
                    std::size_t sequences, std::size_t tokens) {
  const auto& shape = H.shape();
  if (shape.size() != 2 || shape[1] != cfg.d_model) {
    throw DimensionError("encoder_forward: token width " + num::to_string(shape) + " does not match d_model " +
                         std::to_string(cfg.d_model));
  }
  if (shape[0] != sequences * tokens) throw DimensionError("encoder_forward: row count is not sequences × tokens");
  Var x = H;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    auto ln = [&](const char* which, Var v) {
      const std::string base = layer_name(i, which);
      return num::layer_norm(v, tape.param(params.at(base + ".gamma")), tape.param(params.at(base + ".beta")));
    };
    Var a = ln("ln1", x);
    Var q = affine(tape, params, layer_name(i, "attn.q"), a);
    Var k = affine(tape, params, layer_name(i, "attn.k"), a);
    Var v = affine(tape, params, layer_name(i, "attn.v"), a);
    Var att = num::attention(q, k, v, sequences, tokens, cfg.heads);
    x = num::add(x, affine(tape, params, layer_name(i, "attn.o"), att));
    Var f = num::gelu(affine(tape, params, layer_name(i, "ffn.in"), ln("ln2", x)));
    x = num::add(x, affine(tape, params, layer_name(i, "ffn.out"), f));
  }
  return x;
}

Var pool(Var Z, std::size_t sequences, std::size_t tokens) {
  const auto& shape = Z.shape();
  if (tokens == 0 || shape.size() != 2 || shape[0] != sequences * tokens) {
    throw DimensionError("pool: expected (sequences·tokens) × width, got " + num::to_string(shape));
  }
  return num::mean_axis(num::reshape(Z, {sequences, tokens, shape[1]}), 1);
}

Var classify(num::Tape& tape, num::ParamStore& params, Var z) { return affine(tape, params, "head", z); }

std::size_t param_count(const EncoderConfig& cfg, std::size_t outputs) {
  cfg.validate();
  const std::size_t h = cfg.d_model, a = cfg.attention_width(), f = cfg.ffn_mult * cfg.d_model;
  const std::size_t per_layer = 4 * h              // two norms
                                + 3 * (h * a + a)  // q, k, v
                                + (a * h + h)      // output projection
                                + (h * f + f) + (f * h + h);
  return cfg.layers * per_layer + h * outputs + outputs;
}

}  // namespace masktab::encoder
