#include "masktab/train/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "masktab/data/csv.hpp"
#include "masktab/errors.hpp"
#include "masktab/io/f32.hpp"
#include "masktab/io/json_reader.hpp"
#include "masktab/numerics/init.hpp"

namespace masktab::train {

namespace fs = std::filesystem;
using nlohmann::json;
using num::Var;

double lr_at_step(std::size_t step, std::size_t total, std::size_t warmup, double peak, double final_lr) {
  if (step > total) throw ProtocolError("lr_at_step: step beyond total");
  if (warmup > 0 && step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return peak;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return final_lr + 0.5 * (peak - final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

double scale_lr(double n, double n_base, double lr_base) {
  if (!(n > 0.0) || !(n_base > 0.0)) throw ProtocolError("scale_lr: parameter counts must be positive");
  return lr_base / std::sqrt(n / n_base);
}

void optimizer_step(num::ParamStore& params, OptState& state, double lr, const AdamConfig& cfg) {
  for (const auto& [name, _] : state.m) {
    if (!params.contains(name)) throw DimensionError("optimizer state has unknown parameter '" + name + "'");
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    if (p.grad.size() != p.values.size()) throw DimensionError("parameter '" + name + "' has no gradient buffer");
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(p.size(), 0.0);
    if (v.empty()) v.assign(p.size(), 0.0);
    if (m.size() != p.size() || v.size() != p.size()) {
      throw DimensionError("optimizer state for '" + name + "' does not match its shape");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      p.values[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.values[i]);
    }
  }
}

double clip_grad_norm(num::ParamStore& params, double max_norm) {
  double ss = 0.0;
  for (const auto& [_, p] : params) {
    for (const double g : p.grad) ss += g * g;
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [_, p] : params) {
      for (double& g : p.grad) g *= s;
    }
  }
  return norm;
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::hybrid_pretrain: return "hybrid-pretrain";
    case Stage::finetune: return "finetune";
    case Stage::distill: return "distill";
  }
  return "hybrid-pretrain";
}

Stage parse_stage(const std::string& text) {
  if (text == "hybrid-pretrain") return Stage::hybrid_pretrain;
  if (text == "finetune") return Stage::finetune;
  if (text == "distill") return Stage::distill;
  throw ProtocolError("unknown stage '" + text + "'");
}

void RunConfig::validate() const {
  encoder::preset(preset);
  if (batch_size == 0) throw ProtocolError("run: batch_size must be positive");
  if (total_steps > 0 && warmup_steps >= total_steps) throw ProtocolError("run: warmup_steps must be below total_steps");
  if (!(peak_lr >= 0.0) || !(final_lr >= 0.0) || final_lr > peak_lr) {
    throw ProtocolError("run: learning rates must satisfy 0 <= final_lr <= peak_lr");
  }
  if (!(clip_norm > 0.0)) throw ProtocolError("run: clip_norm must be positive");
  hybrid.validate();
  if (use_moe) moe.validate();
  if (stage == Stage::distill) distill.validate();
}

json RunConfig::to_json() const {
  return json{
      {"stage", to_string(stage)},
      {"preset", preset},
      {"batch_size", batch_size},
      {"total_steps", total_steps},
      {"warmup_steps", warmup_steps},
      {"peak_lr", peak_lr},
      {"final_lr", final_lr},
      {"seed", seed},
      {"hybrid",
       {{"lambda", hybrid.lambda},
        {"recon_path_ce_weight", hybrid.recon_path_ce_weight},
        {"r_max", hybrid.r_max},
        {"alpha_mask", hybrid.alpha_mask}}},
      {"moe",
       {{"enabled", use_moe},
        {"routed", moe.routed},
        {"active", moe.active},
        {"alpha_moe", moe.alpha_moe},
        {"beta_moe", moe.beta_moe}}},
      {"mask_mode", embed::to_string(mask_mode)},
      {"distill", {{"lambda1", distill.lambda1}, {"lambda2", distill.lambda2}, {"lambda3", distill.lambda3}}},
      {"finetune_mlm", finetune_mlm},
      {"use_unlabeled", use_unlabeled},
      {"clip_norm", clip_norm},
      {"adam",
       {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}, {"weight_decay", adam.weight_decay}}},
  };
}

RunConfig RunConfig::from_json(const json& j, const RunConfig& base, const std::string& context) {
  RunConfig c = base;
  io::ObjectReader r(j, context);
  std::string stage = to_string(c.stage), mask_mode = embed::to_string(c.mask_mode);
  r.get("stage", stage);
  r.get("preset", c.preset);
  r.get("batch_size", c.batch_size);
  r.get("total_steps", c.total_steps);
  r.get("warmup_steps", c.warmup_steps);
  r.get("peak_lr", c.peak_lr);
  r.get("final_lr", c.final_lr);
  r.get("seed", c.seed);
  if (r.has("hybrid")) {
    auto h = r.child("hybrid");
    h.get("lambda", c.hybrid.lambda);
    h.get("recon_path_ce_weight", c.hybrid.recon_path_ce_weight);
    h.get("r_max", c.hybrid.r_max);
    h.get("alpha_mask", c.hybrid.alpha_mask);
    h.finish();
  }
  if (r.has("moe")) {
    auto m = r.child("moe");
    m.get("enabled", c.use_moe);
    m.get("routed", c.moe.routed);
    m.get("active", c.moe.active);
    m.get("alpha_moe", c.moe.alpha_moe);
    m.get("beta_moe", c.moe.beta_moe);
    m.finish();
  }
  r.get("mask_mode", mask_mode);
  if (r.has("distill")) {
    auto d = r.child("distill");
    d.get("lambda1", c.distill.lambda1);
    d.get("lambda2", c.distill.lambda2);
    d.get("lambda3", c.distill.lambda3);
    d.finish();
  }
  r.get("finetune_mlm", c.finetune_mlm);
  r.get("use_unlabeled", c.use_unlabeled);
  r.get("clip_norm", c.clip_norm);
  if (r.has("adam")) {
    auto a = r.child("adam");
    a.get("beta1", c.adam.beta1);
    a.get("beta2", c.adam.beta2);
    a.get("eps", c.adam.eps);
    a.get("weight_decay", c.adam.weight_decay);
    a.finish();
  }
  r.finish();
  c.stage = parse_stage(stage);
  c.mask_mode = embed::parse_mask_mode(mask_mode);
  c.validate();
  return c;
}

std::string RunConfig::digest() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
  return buf;
}

// ---------------------------------------------------------------------------

void Checkpoint::save(const std::string& dir) const {
  fs::create_directories(dir);
  json layout = json::array();
  std::vector<double> payload, opt_payload;
  for (const auto& [name, t] : params) {
    layout.push_back({{"name", name}, {"shape", t.shape}});
    payload.insert(payload.end(), t.values.begin(), t.values.end());
    const auto m = opt.m.find(name), v = opt.v.find(name);
    if (m != opt.m.end() && m->second.size() == t.size()) {
      opt_payload.insert(opt_payload.end(), m->second.begin(), m->second.end());
    } else {
      opt_payload.insert(opt_payload.end(), t.size(), 0.0);
    }
    if (v != opt.v.end() && v->second.size() == t.size()) {
      opt_payload.insert(opt_payload.end(), v->second.begin(), v->second.end());
    } else {
      opt_payload.insert(opt_payload.end(), t.size(), 0.0);
    }
  }
  json manifest{{"format", "masktab-checkpoint/1"},
                {"step", step},
                {"config_digest", config_digest},
                {"optimizer_t", opt.t},
                {"parameters", layout},
                {"spec", json::parse(spec.to_json_text())}};
  std::ofstream(fs::path(dir) / "manifest.json", std::ios::binary) << manifest.dump(2) << "\n";
  io::write_f32(fs::path(dir) / "params.f32", payload);
  io::write_f32(fs::path(dir) / "opt_state.f32", opt_payload);
}

Checkpoint Checkpoint::load(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw ProtocolError("checkpoint not found: '" + manifest_path.string() + "'");
  Checkpoint c;
  std::vector<std::pair<std::string, num::Shape>> layout;
  try {
    const json m = json::parse(in);
    c.step = m.at("step").get<std::uint64_t>();
    c.config_digest = m.at("config_digest").get<std::string>();
    c.opt.t = m.at("optimizer_t").get<std::uint64_t>();
    for (const auto& p : m.at("parameters")) {
      layout.emplace_back(p.at("name").get<std::string>(), p.at("shape").get<num::Shape>());
    }
    c.spec = objectives::ModelSpec::from_json_text(m.at("spec").dump());
  } catch (const json::exception& e) {
    throw ProtocolError("checkpoint manifest '" + manifest_path.string() + "': " + e.what());
  }
  const auto payload = io::read_f32(fs::path(dir) / "params.f32");
  const auto opt_payload = io::read_f32(fs::path(dir) / "opt_state.f32");
  std::size_t total = 0;
  for (const auto& [_, shape] : layout) total += num::numel(shape);
  if (payload.size() != total || opt_payload.size() != 2 * total) {
    throw ProtocolError("checkpoint '" + dir + "': payload size does not match the manifest");
  }
  std::size_t off = 0, opt_off = 0;
  for (const auto& [name, shape] : layout) {
    const std::size_t n = num::numel(shape);
    c.params.add(name, num::Tensor(shape, std::vector<double>(payload.begin() + static_cast<std::ptrdiff_t>(off),
                                                               payload.begin() + static_cast<std::ptrdiff_t>(off + n))));
    auto at = [&](std::size_t o) { return opt_payload.begin() + static_cast<std::ptrdiff_t>(o); };
    c.opt.m[name] = std::vector<double>(at(opt_off), at(opt_off + n));
    c.opt.v[name] = std::vector<double>(at(opt_off + n), at(opt_off + 2 * n));
    off += n;
    opt_off += 2 * n;
  }
  return c;
}

objectives::Model Checkpoint::model() const { return objectives::Model::assemble(spec, params); }

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "step,lr,l_mlm,l_ce_recon,l_ce_cls,l_align,combined\n";
  auto f = [](double v) { return std::isnan(v) ? std::string("nan") : data::format_double(v); };
  for (const auto& r : rows) {
    os << r.step << ',' << f(r.lr) << ',' << f(r.losses.l_mlm) << ',' << f(r.losses.l_ce_recon) << ','
       << f(r.losses.l_ce_cls) << ',' << f(r.losses.l_align) << ',' << f(r.losses.combined) << '\n';
  }
  return os.str();
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ProtocolError("cannot write '" + path + "'");
  out << metrics_csv(rows);
}

double eta_max_of(std::initializer_list<const data::Dataset*> sets) {
  double eta = 0.0;
  for (const auto* ds : sets) {
    if (ds == nullptr) continue;
    for (std::size_t r = 0; r < ds->rows(); ++r) eta = std::max(eta, embed::instance_missing_ratio(*ds, r));
  }
  return eta;
}

namespace {

/// Epoch-wise shuffled mini-batches with a fixed stream per data source.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed, std::uint64_t stream)
      : n_(n), batch_(std::min(batch, n)), seed_(seed), stream_(stream) {}

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng = Rng::keyed({seed_, stream_, epoch_++});
    rng.shuffle(order_);
    pos_ = 0;
  }

  std::size_t n_, batch_;
  std::uint64_t seed_, stream_, epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

void require_same_features(const data::FeatureSchema& model, const data::FeatureSchema& ds, const char* what) {
  bool same = model.size() == ds.size();
  for (std::size_t k = 0; same && k < model.size(); ++k) {
    same = model.features[k].name == ds.features[k].name && model.features[k].kind == ds.features[k].kind &&
           model.features[k].vocab == ds.features[k].vocab;
  }
  if (!same) throw ProtocolError(std::string(what) + " features do not match the model schema");
}

void quantize_state(num::ParamStore& params, OptState& opt) {
  for (auto& [_, p] : params) num::quantize_f32(p);
  for (auto* side : {&opt.m, &opt.v}) {
    for (auto& [_, vals] : *side) {
      for (double& v : vals) v = static_cast<double>(static_cast<float>(v));
    }
  }
}

}  // namespace

StageResult run_stage(const RunConfig& cfg, const StageData& data, const Checkpoint* init) {
  cfg.validate();
  if (data.labeled == nullptr || data.labeled->empty()) throw ProtocolError("run_stage: labeled data required");
  if (!data.labeled->has_labels()) throw ProtocolError("run_stage: labeled data has no labels");
  if (cfg.stage == Stage::finetune && init == nullptr) throw ProtocolError("finetune stage needs an input checkpoint");
  if (cfg.stage == Stage::distill && data.teacher == nullptr) {
    throw ProtocolError("distill stage needs a teacher cache");
  }
  const data::Dataset& labeled = *data.labeled;
  const data::Dataset* unlabeled = nullptr;
  if (cfg.stage == Stage::hybrid_pretrain && cfg.use_unlabeled && data.unlabeled != nullptr && !data.unlabeled->empty()) {
    unlabeled = data.unlabeled;
  }

  objectives::Model model;
  std::uint64_t start_step = 0;
  if (init != nullptr) {
    model = init->model();
    start_step = init->step;
  } else {
    const std::size_t align = cfg.stage == Stage::distill ? data.teacher->d_t : 0;
    model = objectives::Model::create(objectives::make_model_spec(
        labeled, encoder::preset(cfg.preset), cfg.mask_mode,
        cfg.use_moe ? std::optional<moe::MoEConfig>(cfg.moe) : std::nullopt, align, cfg.seed));
  }
  require_same_features(model.spec.schema, labeled.schema, "labeled");
  if (unlabeled) require_same_features(model.spec.schema, unlabeled->schema, "unlabeled");
  if (cfg.stage == Stage::distill) {
    if (model.spec.align_width != data.teacher->d_t) {
      throw ProtocolError("student alignment width " + std::to_string(model.spec.align_width) +
                          " does not match teacher width " + std::to_string(data.teacher->d_t));
    }
  }

  objectives::HybridConfig hybrid = cfg.hybrid;
  if (cfg.stage == Stage::finetune && !cfg.finetune_mlm) {
    hybrid.lambda = 0.0;
    hybrid.recon_path_ce_weight = 0.0;
  }
  const double eta_max = eta_max_of({&labeled, unlabeled});
  BatchSampler sup(labeled.rows(), cfg.batch_size, cfg.seed, 1);
  std::optional<BatchSampler> unsup;
  if (unlabeled) unsup.emplace(unlabeled->rows(), cfg.batch_size, cfg.seed, 2);

  StageResult result;
  OptState opt;
  for (std::size_t i = 0; i < cfg.total_steps; ++i) {
    const std::size_t step = i + 1;
    const double lr = cfg.stage == Stage::finetune
                          ? cfg.final_lr
                          : lr_at_step(step, cfg.total_steps, cfg.warmup_steps, cfg.peak_lr, cfg.final_lr);
    model.params.zero_grad();
    num::Tape tape;
    const auto rows = sup.next();
    result.audit.labeled_rows += rows.size();
    const objectives::MaskContext ctx{cfg.seed, start_step + step, 11, eta_max, std::nullopt};
    objectives::TwinOptions opts;
    if (cfg.stage == Stage::distill) {
      opts.need_natural = true;
      opts.all_paths = cfg.distill.lambda1 > 0.0;
    }
    const auto twin = objectives::twin_forward(tape, model, labeled, rows, hybrid, ctx, opts);
    MetricsRow row{step, lr, twin.values};
    Var loss = twin.combined;
    if (cfg.stage == Stage::distill) {
      const num::Tensor targets = distill::teacher_targets(*data.teacher, labeled, rows);
      Var align = distill::align_loss(tape, model.params, twin.z_natural, targets);
      row.losses.l_align = align.item();
      Var mlm = twin.l_mlm.tape ? twin.l_mlm : tape.constant(num::Tensor(num::Shape{}, std::vector<double>{0.0}));
      loss = distill::distill_loss(mlm, twin.ce_mix, align, cfg.distill);
    } else if (unsup) {
      const auto urows = unsup->next();
      result.audit.unlabeled_rows += urows.size();
      const objectives::MaskContext uctx{cfg.seed, start_step + step, 12, eta_max, std::nullopt};
      loss = num::add(loss, objectives::unlabeled_mlm(tape, model, *unlabeled, urows, hybrid, uctx));
    }
    row.losses.combined = loss.item();
    if (!std::isfinite(row.losses.combined)) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    tape.backward(loss);
    clip_grad_norm(model.params, cfg.clip_norm);
    optimizer_step(model.params, opt, lr, cfg.adam);
    quantize_state(model.params, opt);
    result.metrics.push_back(row);
  }
  for (auto& [_, p] : model.params) p.zero_grad();
  result.checkpoint.spec = model.spec;
  result.checkpoint.params = std::move(model.params);
  result.checkpoint.opt = std::move(opt);
  result.checkpoint.step = start_step + cfg.total_steps;
  result.checkpoint.config_digest = cfg.digest();
  return result;
}

}  // namespace masktab::train
