#include "masktab/objectives/model.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <json.hpp>
#include <mutex>
#include <thread>

#include "masktab/errors.hpp"
#include "masktab/numerics/init.hpp"

namespace masktab::objectives {

using nlohmann::json;
using num::Tensor;
using num::Var;

std::size_t head_outputs(const data::LabelSpec& label) {
  if (label.kind != data::LabelKind::multiclass) return 1;
  if (label.classes < 2) throw ProtocolError("multiclass label '" + label.name + "' needs at least 2 classes");
  return label.classes;
}

std::size_t ModelSpec::outputs() const {
  if (!schema.label) throw ProtocolError("model spec: schema has no label");
  return head_outputs(*schema.label);
}

void ModelSpec::validate() const {
  schema.validate();
  outputs();
  encoder.validate();
  if (embed.h != encoder.d_model) throw ProtocolError("model spec: token width must equal d_model");
  if (standardizer.mean.size() != schema.size() || standardizer.std.size() != schema.size()) {
    throw ProtocolError("model spec: standardizer does not match the schema");
  }
  if (moe) moe->validate();
}

std::string ModelSpec::to_json_text() const {
  json doc;
  doc["schema"] = json::parse(schema.to_json_text());
  doc["embed"] = {{"h", embed.h}, {"name_seed", embed.name_seed}, {"mask_mode", embed::to_string(embed.mask_mode)}};
  doc["standardizer"] = {{"mean", standardizer.mean}, {"std", standardizer.std}};
  doc["encoder"] = {{"preset", encoder.preset}, {"layers", encoder.layers}, {"heads", encoder.heads},
                    {"kv", encoder.kv},         {"d_model", encoder.d_model}, {"ffn_mult", encoder.ffn_mult}};
  if (moe) {
    doc["moe"] = {{"routed", moe->routed}, {"active", moe->active}, {"alpha_moe", moe->alpha_moe},
                  {"beta_moe", moe->beta_moe}};
  } else {
    doc["moe"] = nullptr;
  }
  doc["align_width"] = align_width;
  doc["init_seed"] = init_seed;
  return doc.dump(2);
}

ModelSpec ModelSpec::from_json_text(const std::string& text) {
  ModelSpec s;
  try {
    const json doc = json::parse(text);
    s.schema = data::FeatureSchema::from_json_text(doc.at("schema").dump());
    const auto& e = doc.at("embed");
    s.embed.h = e.at("h").get<std::size_t>();
    s.embed.name_seed = e.at("name_seed").get<std::uint64_t>();
    s.embed.mask_mode = embed::parse_mask_mode(e.at("mask_mode").get<std::string>());
    s.standardizer.mean = doc.at("standardizer").at("mean").get<std::vector<double>>();
    s.standardizer.std = doc.at("standardizer").at("std").get<std::vector<double>>();
    const auto& en = doc.at("encoder");
    s.encoder.preset = en.at("preset").get<std::string>();
    s.encoder.layers = en.at("layers").get<std::size_t>();
    s.encoder.heads = en.at("heads").get<std::size_t>();
    s.encoder.kv = en.at("kv").get<std::size_t>();
    s.encoder.d_model = en.at("d_model").get<std::size_t>();
    s.encoder.ffn_mult = en.at("ffn_mult").get<std::size_t>();
    if (!doc.at("moe").is_null()) {
      const auto& m = doc.at("moe");
      s.moe = moe::MoEConfig{m.at("routed").get<std::size_t>(), m.at("active").get<std::size_t>(),
                             m.at("alpha_moe").get<double>(), m.at("beta_moe").get<double>()};
    }
    s.align_width = doc.at("align_width").get<std::size_t>();
    s.init_seed = doc.at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& ex) {
    throw ProtocolError(std::string("model spec: ") + ex.what());
  }
  s.validate();
  return s;
}

ModelSpec make_model_spec(const data::Dataset& train, const encoder::EncoderConfig& enc, embed::MaskMode mask_mode,
                          std::optional<moe::MoEConfig> moe, std::size_t align_width, std::uint64_t seed) {
  ModelSpec s;
  s.schema = train.schema;
  if (!s.schema.label) throw ProtocolError("model spec: training data has no label spec");
  if (s.schema.label->kind == data::LabelKind::multiclass && s.schema.label->classes == 0) {
    double top = 0.0;
    for (const double y : train.labels()) top = std::max(top, y);
    s.schema.label->classes = static_cast<std::size_t>(top) + 1;
  }
  s.embed.h = enc.d_model;
  s.embed.name_seed = seed;
  s.embed.mask_mode = mask_mode;
  s.standardizer = embed::Standardizer::fit(train);
  s.encoder = enc;
  s.moe = moe;
  s.align_width = align_width;
  s.init_seed = seed;
  s.validate();
  return s;
}

namespace {

void init_align(num::ParamStore& params, std::size_t d_t, std::size_t h, std::uint64_t seed) {
  Rng rng = num::param_rng(seed, "align.weight");
  params.add("align.weight", num::truncated_normal({d_t, h}, 0.02, rng));
  params.add("align.bias", Tensor({d_t}));
}

}  // namespace

Model Model::create(ModelSpec spec) {
  spec.validate();
  Model m;
  m.embedder = embed::Embedder(spec.schema, spec.embed, spec.standardizer);
  m.embedder.init_params(m.params, spec.init_seed);
  encoder::init_encoder_params(m.params, spec.encoder, spec.init_seed);
  encoder::init_head_params(m.params, spec.encoder.d_model, spec.outputs(), spec.init_seed);
  if (spec.moe) {
    moe::init_moe_params(m.params, *spec.moe, spec.encoder.d_model, spec.init_seed);
  } else {
    init_mlm_head(m.params, spec.encoder.d_model, spec.init_seed);
  }
  if (spec.align_width > 0) init_align(m.params, spec.align_width, spec.encoder.d_model, spec.init_seed);
  m.spec = std::move(spec);
  return m;
}

Model Model::assemble(ModelSpec spec, num::ParamStore params) {
  Model reference = create(spec);
  for (const auto& [name, t] : reference.params) {
    if (!params.contains(name)) throw ProtocolError("parameter '" + name + "' missing");
    if (params.at(name).shape != t.shape) {
      throw DimensionError("parameter '" + name + "' has shape " + num::to_string(params.at(name).shape) +
                           ", expected " + num::to_string(t.shape));
    }
  }
  if (params.count() != reference.params.count()) throw ProtocolError("unexpected extra parameters");
  reference.params = std::move(params);
  return reference;
}

Forward forward(num::Tape& tape, Model& model, const data::Dataset& ds, std::span<const std::size_t> rows,
                std::span<const std::vector<std::size_t>> masks) {
  Forward f;
  f.tokens = model.embedder.tokenize(tape, model.params, ds, rows, masks);
  f.Z = encoder::encoder_forward(tape, model.params, model.spec.encoder, f.tokens.H, rows.size(), model.embedder.d());
  f.z = encoder::pool(f.Z, rows.size(), model.embedder.d());
  f.logits = encoder::classify(tape, model.params, f.z);
  return f;
}

namespace {

constexpr std::size_t kChunk = 256;

std::atomic<std::size_t> g_threads{1};

template <typename Pick>
Tensor chunked(Model& model, const data::Dataset& ds, std::span<const std::size_t> rows, std::size_t width, Pick pick) {
  Tensor out({rows.size(), width});
  const std::size_t chunks = (rows.size() + kChunk - 1) / kChunk;
  auto run = [&](std::size_t c) {
    const std::size_t start = c * kChunk;
    const std::size_t n = std::min(kChunk, rows.size() - start);
    num::Tape tape;
    const Forward f = forward(tape, model, ds, rows.subspan(start, n));
    const Tensor& v = pick(f).value();
    std::copy(v.values.begin(), v.values.end(), out.values.begin() + static_cast<std::ptrdiff_t>(start * width));
  };
  const std::size_t workers = std::min(g_threads.load(), chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run(c);
    return out;
  }
  // Binding a parameter sizes its gradient buffer; do it up front so the
  // workers only read shared state.
  for (auto& [_, p] : model.params) {
    if (p.grad.size() != p.values.size()) p.grad.assign(p.values.size(), 0.0);
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < chunks; c = next++) {
        try {
          run(c);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace

void set_inference_threads(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }
std::size_t inference_threads() { return g_threads; }

Tensor predict_logits(Model& model, const data::Dataset& ds, std::span<const std::size_t> rows) {
  return chunked(model, ds, rows, model.spec.outputs(), [](const Forward& f) { return f.logits; });
}

Tensor embed_rows(Model& model, const data::Dataset& ds, std::span<const std::size_t> rows) {
  return chunked(model, ds, rows, model.spec.encoder.d_model, [](const Forward& f) { return f.z; });
}

std::vector<std::vector<std::size_t>> sample_masks(const data::Dataset& ds, std::span<const std::size_t> rows,
                                                   const HybridConfig& cfg, const MaskContext& ctx) {
  std::vector<std::vector<std::size_t>> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    const auto observed = embed::observed_features(ds, r);
    double rate = 0.0;
    if (ctx.forced_rate) {
      rate = *ctx.forced_rate;
    } else {
      const double eta = std::min(embed::instance_missing_ratio(ds, r), ctx.eta_max);
      rate = embed::adaptive_mask_rate(eta, ctx.eta_max, cfg.r_max, cfg.alpha_mask);
    }
    Rng rng = Rng::keyed({ctx.seed, ctx.step, static_cast<std::uint64_t>(ds.row_id(r)), ctx.stream});
    out[i] = embed::sample_mask(observed, rate, rng);
  }
  return out;
}

Var reconstruction_loss(num::Tape& tape, Model& model, Var Z, const MaskedTokens& tokens) {
  if (model.spec.moe) return moe::moe_mlm_loss(tape, model.params, model.embedder, *model.spec.moe, Z, tokens).total;
  return mlm_loss(tape, model.params, model.embedder, Z, tokens);
}

TwinOutput twin_forward(num::Tape& tape, Model& model, const data::Dataset& ds, std::span<const std::size_t> rows,
                        const HybridConfig& cfg, const MaskContext& ctx, TwinOptions options) {
  cfg.validate();
  if (rows.empty()) throw ProtocolError("twin_forward: empty batch");
  if (!ds.has_labels()) throw ProtocolError("twin_forward: labeled rows required");
  const auto kind = model.spec.schema.label->kind;
  std::vector<double> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = ds.label(rows[i]);

  const double lambda = cfg.lambda, w = cfg.recon_path_ce_weight;
  const bool masked_path = options.all_paths || lambda > 0.0 || w > 0.0;
  const bool natural_path = options.all_paths || options.need_natural || w < 1.0;
  const double row_scale = 1.0 / static_cast<double>(rows.size());

  TwinOutput out;
  if (masked_path) {
    const auto masks = sample_masks(ds, rows, cfg, ctx);
    const Forward f = forward(tape, model, ds, rows, masks);
    out.l_mlm = reconstruction_loss(tape, model, f.Z, masked_tokens(f.tokens, ds, rows, model.embedder, row_scale));
    out.l_ce_recon = ce_loss(f.logits, y, kind);
    out.values.l_mlm = out.l_mlm.item();
    out.values.l_ce_recon = out.l_ce_recon.item();
  }
  if (natural_path) {
    const Forward f = forward(tape, model, ds, rows);
    out.l_ce_cls = ce_loss(f.logits, y, kind);
    out.z_natural = f.z;
    out.values.l_ce_cls = out.l_ce_cls.item();
  }

  // Terms with a zero coefficient are left out rather than multiplied by 0.
  std::vector<std::pair<double, Var>> ce_terms;
  if (w != 0.0) ce_terms.push_back({w, out.l_ce_recon});
  if (w != 1.0) ce_terms.push_back({1.0 - w, out.l_ce_cls});
  Var ce = num::scale(ce_terms[0].second, ce_terms[0].first);
  if (ce_terms.size() == 2) ce = num::add(ce, num::scale(ce_terms[1].second, ce_terms[1].first));
  out.ce_mix = ce;
  if (lambda == 0.0) {
    out.combined = ce;
  } else if (lambda == 1.0) {
    out.combined = num::scale(out.l_mlm, 1.0);
  } else {
    out.combined = num::add(num::scale(out.l_mlm, lambda), num::scale(ce, 1.0 - lambda));
  }
  out.values.combined = out.combined.item();
  return out;
}

Var unlabeled_mlm(num::Tape& tape, Model& model, const data::Dataset& ds, std::span<const std::size_t> rows,
                  const HybridConfig& cfg, const MaskContext& ctx) {
  cfg.validate();
  if (rows.empty()) throw ProtocolError("unlabeled_mlm: empty batch");
  const auto masks = sample_masks(ds, rows, cfg, ctx);
  auto tm = model.embedder.tokenize(tape, model.params, ds, rows, masks);
  Var Z = encoder::encoder_forward(tape, model.params, model.spec.encoder, tm.H, rows.size(), model.embedder.d());
  return reconstruction_loss(tape, model, Z, masked_tokens(tm, ds, rows, model.embedder, 1.0 / static_cast<double>(rows.size())));
}

}  // namespace masktab::objectives
