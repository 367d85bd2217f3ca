#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "masktab/distill/distill.hpp"
#include "masktab/objectives/model.hpp"

namespace masktab::train {

/// Linear warmup from 0 to `peak` over [0, warmup], then cosine from `peak`
/// to `final_lr` over [warmup, total].
double lr_at_step(std::size_t step, std::size_t total, std::size_t warmup, double peak, double final_lr);

/// lr_base / sqrt(n / n_base).
double scale_lr(double n, double n_base, double lr_base);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptState {
  std::uint64_t t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One decoupled-weight-decay Adam update from the gradients stored in
/// `params`. Throws DimensionError when state and parameters disagree.
void optimizer_step(num::ParamStore& params, OptState& state, double lr, const AdamConfig& cfg);

/// Rescales all gradients so their global norm is at most max_norm; returns
/// the norm before clipping.
double clip_grad_norm(num::ParamStore& params, double max_norm);

enum class Stage { hybrid_pretrain, finetune, distill };
std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);

struct RunConfig {
  Stage stage = Stage::hybrid_pretrain;
  std::string preset = "base";
  std::size_t batch_size = 64;
  std::size_t total_steps = 2000;
  std::size_t warmup_steps = 100;
  double peak_lr = 1e-4;
  double final_lr = 1e-5;
  std::uint64_t seed = 0;
  objectives::HybridConfig hybrid;
  bool use_moe = false;
  moe::MoEConfig moe;
  embed::MaskMode mask_mode = embed::MaskMode::shared;
  distill::DistillConfig distill;
  bool finetune_mlm = false;
  bool use_unlabeled = true;
  double clip_norm = 1.0;
  AdamConfig adam;

  void validate() const;
  nlohmann::json to_json() const;
  /// Starts from `base` and overrides the keys present; unknown keys are
  /// rejected.
  static RunConfig from_json(const nlohmann::json& j, const RunConfig& base, const std::string& context);
  /// FNV-1a digest of the canonical JSON form.
  std::string digest() const;
};

struct Checkpoint {
  objectives::ModelSpec spec;
  num::ParamStore params;
  OptState opt;
  std::uint64_t step = 0;
  std::string config_digest;

  /// manifest.json + params.f32 + opt_state.f32.
  void save(const std::string& dir) const;
  static Checkpoint load(const std::string& dir);
  objectives::Model model() const;
};

struct MetricsRow {
  std::size_t step = 0;
  double lr = 0.0;
  objectives::LossBreakdown losses;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

struct StageData {
  const data::Dataset* labeled = nullptr;
  const data::Dataset* unlabeled = nullptr;  // hybrid-pretrain only; may be null
  const distill::TeacherCache* teacher = nullptr;
};

/// Row reads per source, for auditing what a stage touched.
struct DataAudit {
  std::size_t labeled_rows = 0;
  std::size_t unlabeled_rows = 0;
};

struct StageResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
  DataAudit audit;
};

/// Trains one stage. hybrid-pretrain and distill start from `init` when
/// given, otherwise from fresh parameters; finetune requires `init`.
StageResult run_stage(const RunConfig& cfg, const StageData& data, const Checkpoint* init = nullptr);

/// Largest per-row missing ratio over the given datasets.
double eta_max_of(std::initializer_list<const data::Dataset*> sets);

}  // namespace masktab::train
