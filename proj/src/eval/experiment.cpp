#include "masktab/eval/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "masktab/data/csv.hpp"
#include "masktab/data/stats.hpp"
#include "masktab/errors.hpp"

namespace masktab::eval {

std::string to_string(Imputation how) {
  switch (how) {
    case Imputation::none: return "none";
    case Imputation::zero: return "zero";
    case Imputation::mode: return "mode";
  }
  return "none";
}

Imputation parse_imputation(const std::string& text) {
  if (text == "none") return Imputation::none;
  if (text == "zero") return Imputation::zero;
  if (text == "mode") return Imputation::mode;
  throw ProtocolError("unknown imputation '" + text + "'");
}

namespace {

constexpr std::size_t kModeBins = 20;

std::vector<double> fill_values(Imputation how, const data::Dataset& ref) {
  const std::size_t d = ref.features();
  std::vector<double> fill(d, 0.0);
  if (how != Imputation::mode) return fill;
  for (std::size_t k = 0; k < d; ++k) {
    const auto& spec = ref.schema.features[k];
    if (spec.kind == data::FeatureKind::categorical) {
      std::vector<std::size_t> counts(spec.vocab.size(), 0);
      for (std::size_t r = 0; r < ref.rows(); ++r) {
        if (!ref.is_missing(r, k)) ++counts[static_cast<std::size_t>(ref.value(r, k))];
      }
      fill[k] = static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      continue;
    }
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t r = 0; r < ref.rows(); ++r) {
      if (ref.is_missing(r, k)) continue;
      lo = std::min(lo, ref.value(r, k));
      hi = std::max(hi, ref.value(r, k));
    }
    if (!std::isfinite(lo)) continue;  // never observed
    if (hi == lo) {
      fill[k] = lo;
      continue;
    }
    const double width = (hi - lo) / static_cast<double>(kModeBins);
    std::vector<std::size_t> counts(kModeBins, 0);
    for (std::size_t r = 0; r < ref.rows(); ++r) {
      if (ref.is_missing(r, k)) continue;
      const auto b = std::min(kModeBins - 1, static_cast<std::size_t>((ref.value(r, k) - lo) / width));
      ++counts[b];
    }
    const auto best = static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    fill[k] = lo + (best + 0.5) * width;
  }
  return fill;
}

}  // namespace

data::Dataset impute(const data::Dataset& ds, Imputation how, const data::Dataset& reference) {
  if (how == Imputation::none) return ds;
  if (reference.features() != ds.features()) throw DimensionError("impute: reference has a different width");
  const auto fill = fill_values(how, reference);
  data::Dataset out(ds.schema);
  std::vector<std::optional<double>> cells(ds.features());
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t k = 0; k < ds.features(); ++k) cells[k] = ds.is_missing(r, k) ? fill[k] : ds.value(r, k);
    out.append(cells, ds.has_labels() ? std::optional<double>(ds.label(r)) : std::nullopt,
               ds.has_timestamps() ? std::optional<data::Date>(ds.timestamp(r)) : std::nullopt, ds.row_id(r));
  }
  return out;
}

ExperimentData ExperimentData::select_features(std::span<const std::size_t> features) const {
  ExperimentData out;
  out.train = train.select_features(features);
  out.unlabeled = unlabeled.select_features(features);
  for (const auto& m : test_months) out.test_months.push_back({m.month, m.rows.select_features(features)});
  return out;
}

ExperimentData ExperimentData::with_unlabeled(std::size_t rows) const {
  if (rows > unlabeled.rows()) {
    throw ProtocolError("requested " + std::to_string(rows) + " unlabeled rows, only " +
                        std::to_string(unlabeled.rows()) + " available");
  }
  ExperimentData out = *this;
  std::vector<std::size_t> keep(rows);
  for (std::size_t i = 0; i < rows; ++i) keep[i] = i;
  out.unlabeled = unlabeled.subset(keep);
  return out;
}

ExperimentData make_experiment(const data::Dataset& labeled, const data::Dataset& unlabeled,
                               const std::vector<data::Date>& boundaries) {
  auto split = data::temporal_split(labeled, boundaries);
  ExperimentData out;
  out.train = std::move(split.train);
  out.unlabeled = unlabeled;
  out.test_months = std::move(split.test_months);
  if (out.train.empty()) throw ProtocolError("experiment: empty train split");
  if (out.test_months.empty()) throw ProtocolError("experiment: empty test split");
  return out;
}

std::vector<Variant> standard_ladder() {
  return {
      {"vanilla", Imputation::zero, 0.0, 0.0, false, embed::MaskMode::shared, false},
      {"+Mask Embedding", Imputation::none, std::nullopt, 1.0, false, embed::MaskMode::shared, true},
      {"+Twin Networks", Imputation::none, std::nullopt, std::nullopt, false, embed::MaskMode::shared, true},
      {"+MoE", Imputation::none, std::nullopt, std::nullopt, true, embed::MaskMode::shared, true},
  };
}

std::vector<Variant> known_variants() {
  auto all = standard_ladder();
  all.push_back({"imputation_zero", Imputation::zero, std::nullopt, std::nullopt, false, embed::MaskMode::shared, true});
  all.push_back({"imputation_mode", Imputation::mode, std::nullopt, std::nullopt, false, embed::MaskMode::shared, true});
  all.push_back({"mask_shared", Imputation::none, std::nullopt, std::nullopt, false, embed::MaskMode::shared, true});
  all.push_back({"mask_feature_specific", Imputation::none, std::nullopt, std::nullopt, false,
                 embed::MaskMode::feature_specific, true});
  return all;
}

Variant find_variant(const std::string& name) {
  for (const auto& v : known_variants()) {
    if (v.name == name) return v;
  }
  throw ProtocolError("unknown variant '" + name + "'");
}

train::RunConfig apply_variant(const train::RunConfig& base, const Variant& v) {
  train::RunConfig cfg = base;
  cfg.stage = train::Stage::hybrid_pretrain;
  if (v.lambda) cfg.hybrid.lambda = *v.lambda;
  if (v.recon_path_ce_weight) cfg.hybrid.recon_path_ce_weight = *v.recon_path_ce_weight;
  cfg.use_moe = v.use_moe;
  cfg.mask_mode = v.mask_mode;
  cfg.use_unlabeled = base.use_unlabeled && v.use_unlabeled;
  cfg.validate();
  return cfg;
}

TrainedRun train_and_evaluate(const train::RunConfig& cfg, const ExperimentData& data, Imputation imputation,
                              std::size_t finetune_steps) {
  const ExperimentData* use = &data;
  ExperimentData imputed;
  if (imputation != Imputation::none) {
    imputed.train = impute(data.train, imputation, data.train);
    imputed.unlabeled = impute(data.unlabeled, imputation, data.train);
    for (const auto& m : data.test_months) {
      imputed.test_months.push_back({m.month, impute(m.rows, imputation, data.train)});
    }
    use = &imputed;
  }
  train::RunConfig pre = cfg;
  pre.stage = train::Stage::hybrid_pretrain;
  TrainedRun run;
  run.pretrain = train::run_stage(pre, {&use->train, &use->unlabeled, nullptr});
  if (finetune_steps > 0) {
    train::RunConfig ft = cfg;
    ft.stage = train::Stage::finetune;
    ft.total_steps = finetune_steps;
    ft.warmup_steps = 0;
    run.finetune = train::run_stage(ft, {&use->train, nullptr, nullptr}, &run.pretrain.checkpoint);
  }
  auto model = run.final_checkpoint().model();
  run.report = monthly_oot_report(model, use->train, use->test_months);
  run.report.metadata["step"] = run.final_checkpoint().step;
  run.report.metadata["config_digest"] = run.final_checkpoint().config_digest;
  run.report.metadata["imputation"] = to_string(imputation);
  return run;
}

std::string ResultTable::csv() const {
  std::ostringstream os;
  auto f = [](double v) { return std::isnan(v) ? std::string() : data::format_double(v); };
  os << key << ",auc,ks,pooled_auc,pooled_ks,rmse,lr\n";
  for (const auto& r : rows) {
    const bool quote = r.name.find(',') != std::string::npos;
    os << (quote ? "\"" + r.name + "\"" : r.name) << ',' << f(r.auc) << ',' << f(r.ks) << ',' << f(r.pooled_auc)
       << ',' << f(r.pooled_ks) << ',' << f(r.rmse) << ',' << f(r.lr) << '\n';
  }
  return os.str();
}

ResultRow result_row(const std::string& name, const EvalReport& report) {
  const auto& mean = report.row("monthly_mean");
  const auto& pooled = report.row("pooled");
  return {name, mean.auc, mean.ks, pooled.auc, pooled.ks, mean.rmse, kNotApplicable};
}

ResultTable ablation_run(const train::RunConfig& base, const ExperimentData& data, std::span<const Variant> ladder,
                         std::size_t finetune_steps) {
  if (ladder.empty()) throw ProtocolError("ablation ladder is empty");
  ResultTable table;
  table.key = "variant";
  for (const auto& v : ladder) {
    const auto cfg = apply_variant(base, v);
    const auto run = train_and_evaluate(cfg, data, v.imputation, finetune_steps);
    auto row = result_row(v.name, run.report);
    row.lr = cfg.peak_lr;
    table.rows.push_back(row);
  }
  return table;
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::unlabeled_ratio: return "unlabeled-ratio";
    case SweepAxis::feature_count: return "feature-count";
    case SweepAxis::model_size: return "model-size";
  }
  return "unlabeled-ratio";
}

SweepAxis parse_sweep_axis(const std::string& text) {
  if (text == "unlabeled-ratio") return SweepAxis::unlabeled_ratio;
  if (text == "feature-count") return SweepAxis::feature_count;
  if (text == "model-size") return SweepAxis::model_size;
  throw ProtocolError("unknown sweep axis '" + text + "'");
}

std::vector<std::string> default_grid(SweepAxis axis, const ExperimentData& data) {
  switch (axis) {
    case SweepAxis::unlabeled_ratio: return {"0", "5", "10", "20", "40"};
    case SweepAxis::feature_count: {
      std::vector<std::string> grid;
      const std::size_t d = data.train.features();
      for (std::size_t m = 1; 5 * m < d; ++m) grid.push_back(std::to_string(5 * m));
      grid.push_back(std::to_string(d));
      return grid;
    }
    case SweepAxis::model_size: return encoder::preset_names();
  }
  return {};
}

namespace {

std::size_t parse_count(const std::string& text, const char* what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size()) throw ProtocolError(std::string(what) + ": '" + text + "' is not a count");
  return static_cast<std::size_t>(v);
}

}  // namespace

ResultTable scaling_sweep(SweepAxis axis, std::span<const std::string> grid, const train::RunConfig& base,
                          const ExperimentData& data) {
  if (grid.empty()) throw ProtocolError("sweep grid is empty");
  ResultTable table;
  table.key = to_string(axis);
  std::optional<data::FeatureRanking> ranking;
  if (axis == SweepAxis::feature_count) ranking = data::rank_features(data.train);
  const std::size_t outputs = objectives::head_outputs(*data.train.schema.label);
  for (const auto& point : grid) {
    train::RunConfig cfg = base;
    cfg.stage = train::Stage::hybrid_pretrain;
    ExperimentData slice;
    const ExperimentData* use = &data;
    switch (axis) {
      case SweepAxis::unlabeled_ratio: {
        const std::size_t ratio = parse_count(point, "unlabeled-ratio");
        slice = data.with_unlabeled(ratio * data.train.rows());
        use = &slice;
        break;
      }
      case SweepAxis::feature_count: {
        const std::size_t k = parse_count(point, "feature-count");
        if (k == 0 || k > data.train.features()) throw ProtocolError("feature-count '" + point + "' out of range");
        const auto top = data::feature_groups(*ranking, k, 1);
        slice = data.select_features(top);
        use = &slice;
        break;
      }
      case SweepAxis::model_size: {
        const double n = static_cast<double>(encoder::param_count(encoder::preset(point), outputs));
        const double n_base = static_cast<double>(encoder::param_count(encoder::preset(base.preset), outputs));
        cfg.preset = point;
        cfg.peak_lr = train::scale_lr(n, n_base, base.peak_lr);
        cfg.final_lr = train::scale_lr(n, n_base, base.final_lr);
        break;
      }
    }
    cfg.validate();
    const auto run = train_and_evaluate(cfg, *use);
    auto row = result_row(point, run.report);
    row.lr = cfg.peak_lr;
    table.rows.push_back(row);
  }
  return table;
}

namespace {

double mean_alignment(objectives::Model& student, const data::Dataset& ds, const distill::TeacherCache& cache) {
  std::vector<std::size_t> rows(ds.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const num::Tensor z = objectives::embed_rows(student, ds, rows);
  const num::Tensor targets = distill::teacher_targets(cache, ds, rows);
  const auto& w = student.params.at("align.weight").values;
  const auto& b = student.params.at("align.bias").values;
  const std::size_t h = z.shape[1], dt = cache.d_t;
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    total += distill::align_loss(std::span(z.values).subspan(i * h, h), w, b,
                                 std::span(targets.values).subspan(i * dt, dt));
  }
  return total / static_cast<double>(rows.size());
}

}  // namespace

DistillRun distill_student(const train::RunConfig& cfg, objectives::Model& teacher, const ExperimentData& full,
                           std::span<const std::size_t> student_features, const std::string& cache_dir) {
  if (cfg.stage != train::Stage::distill) throw ProtocolError("distill_student needs a distill-stage config");
  DistillRun out;
  out.cache = cache_dir.empty() ? distill::cache_teacher(teacher, full.train)
                                : distill::ensure_teacher_cache(teacher, full.train, cache_dir);
  const ExperimentData student = full.select_features(student_features);
  auto init = objectives::Model::create(objectives::make_model_spec(
      student.train, encoder::preset(cfg.preset), cfg.mask_mode,
      cfg.use_moe ? std::optional<moe::MoEConfig>(cfg.moe) : std::nullopt, out.cache.d_t, cfg.seed));
  out.align_init = mean_alignment(init, student.train, out.cache);
  out.result = train::run_stage(cfg, {&student.train, nullptr, &out.cache});
  auto model = out.result.checkpoint.model();
  out.align_final = mean_alignment(model, student.train, out.cache);
  out.report = monthly_oot_report(model, student.train, student.test_months);
  out.report.metadata["step"] = out.result.checkpoint.step;
  out.report.metadata["config_digest"] = out.result.checkpoint.config_digest;
  out.report.metadata["teacher_digest"] = out.cache.teacher_digest;
  return out;
}

}  // namespace masktab::eval
