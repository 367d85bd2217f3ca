#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "masktab/data/split.hpp"
#include "masktab/eval/report.hpp"
#include "masktab/train/train.hpp"

namespace masktab::eval {

enum class Imputation { none, zero, mode };

std::string to_string(Imputation how);
Imputation parse_imputation(const std::string& text);

/// Fills every missing cell. zero: 0 for numerical, category 0 for
/// categorical. mode: for numerical features the midpoint of the most
/// populated of 20 equal-width bins over `reference`, for categorical the
/// most frequent category in `reference`.
data::Dataset impute(const data::Dataset& ds, Imputation how, const data::Dataset& reference);

/// Labeled train split, unlabeled pool and monthly out-of-time buckets.
struct ExperimentData {
  data::Dataset train;
  data::Dataset unlabeled;
  std::vector<data::MonthBucket> test_months;

  /// Restricts every part to the given feature columns.
  ExperimentData select_features(std::span<const std::size_t> features) const;
  /// Keeps the first `rows` unlabeled rows.
  ExperimentData with_unlabeled(std::size_t rows) const;
};

/// Splits `labeled` at `boundaries` (train before the first, test from the
/// last); the validation slice is unused.
ExperimentData make_experiment(const data::Dataset& labeled, const data::Dataset& unlabeled,
                               const std::vector<data::Date>& boundaries);

/// One training recipe, expressed as overrides of a base RunConfig.
struct Variant {
  std::string name;
  Imputation imputation = Imputation::none;
  std::optional<double> lambda;
  std::optional<double> recon_path_ce_weight;
  bool use_moe = false;
  embed::MaskMode mask_mode = embed::MaskMode::shared;
  bool use_unlabeled = true;
};

/// vanilla, +Mask Embedding, +Twin Networks, +MoE.
std::vector<Variant> standard_ladder();
/// Every named variant: the ladder plus imputation_zero, imputation_mode,
/// mask_shared and mask_feature_specific.
std::vector<Variant> known_variants();
/// Throws ProtocolError for an unknown name.
Variant find_variant(const std::string& name);

train::RunConfig apply_variant(const train::RunConfig& base, const Variant& v);

struct TrainedRun {
  train::StageResult pretrain;
  std::optional<train::StageResult> finetune;
  EvalReport report;

  const train::Checkpoint& final_checkpoint() const {
    return finetune ? finetune->checkpoint : pretrain.checkpoint;
  }
};

/// hybrid-pretrain (plus an optional constant-LR finetune) followed by the
/// monthly out-of-time report.
TrainedRun train_and_evaluate(const train::RunConfig& cfg, const ExperimentData& data,
                              Imputation imputation = Imputation::none, std::size_t finetune_steps = 0);

struct ResultRow {
  std::string name;
  double auc = kNotApplicable;  // monthly mean
  double ks = kNotApplicable;
  double pooled_auc = kNotApplicable;
  double pooled_ks = kNotApplicable;
  double rmse = kNotApplicable;
  double lr = kNotApplicable;
};

struct ResultTable {
  std::string key;  // first column header
  std::vector<ResultRow> rows;
  std::string csv() const;
};

ResultRow result_row(const std::string& name, const EvalReport& report);

/// One run per variant, same seed and schedule, rows in ladder order.
ResultTable ablation_run(const train::RunConfig& base, const ExperimentData& data, std::span<const Variant> ladder,
                         std::size_t finetune_steps = 0);

enum class SweepAxis { unlabeled_ratio, feature_count, model_size };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& text);
/// 0/5/10/20/40 for unlabeled-ratio, IV-ranked prefixes in steps of 5
/// features for feature-count, every preset for model-size.
std::vector<std::string> default_grid(SweepAxis axis, const ExperimentData& data);

/// One run per grid point, varying only the named axis. unlabeled-ratio
/// points are multiples of the labeled train size; feature-count points
/// keep the top features by information value; model-size points name
/// presets and rescale both learning rates with scale_lr against the base
/// preset.
ResultTable scaling_sweep(SweepAxis axis, std::span<const std::string> grid, const train::RunConfig& base,
                          const ExperimentData& data);

/// A student on a subset of features aligned to a teacher trained on all
/// of them.
struct DistillRun {
  distill::TeacherCache cache;
  train::StageResult result;
  EvalReport report;
  double align_init = 0.0;   // mean alignment loss over train rows
  double align_final = 0.0;
};

/// Caches the teacher over `full.train` (reusing `cache_dir` when given),
/// then trains the student on `student_features` with cfg.stage = distill.
DistillRun distill_student(const train::RunConfig& cfg, objectives::Model& teacher, const ExperimentData& full,
                           std::span<const std::size_t> student_features, const std::string& cache_dir = "");

}  // namespace masktab::eval
