#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "masktab/data/synth.hpp"
#include "masktab/errors.hpp"
#include "masktab/train/train.hpp"
#include "toy.hpp"

using namespace masktab;
using namespace masktab::train;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("masktab_test_train_" + name);
  fs::remove_all(p);
  return p;
}

data::SyntheticData small_synth(std::uint64_t seed) {
  data::GeneratorConfig g;
  g.d_num = 6;
  g.d_cat = 2;
  g.n_labeled = 600;
  g.n_unlabeled = 600;
  return data::synth_generate(g, seed);
}

RunConfig quick_config(std::size_t steps, std::uint64_t seed) {
  RunConfig c;
  c.batch_size = 32;
  c.total_steps = steps;
  c.warmup_steps = steps / 10;
  c.peak_lr = 3e-3;
  c.final_lr = 3e-4;
  c.seed = seed;
  return c;
}

bool same_params(const num::ParamStore& a, const num::ParamStore& b) {
  if (a.names() != b.names()) return false;
  for (const auto& [name, t] : a) {
    if (t.values != b.at(name).values || t.shape != b.at(name).shape) return false;
  }
  return true;
}

}  // namespace

TEST(Schedule, DefaultScheduleValues) {
  // Warmup 100, peak 1e-4, decays by a factor of 10.
  EXPECT_DOUBLE_EQ(lr_at_step(100, 2000, 100, 1e-4, 1e-5), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at_step(2000, 2000, 100, 1e-4, 1e-5), 1e-5);
  EXPECT_NEAR(lr_at_step(100 + 950, 2000, 100, 1e-4, 1e-5), (1e-4 + 1e-5) / 2, 1e-18);
  EXPECT_EQ(lr_at_step(0, 2000, 100, 1e-4, 1e-5), 0.0);
  EXPECT_DOUBLE_EQ(lr_at_step(50, 2000, 100, 1e-4, 1e-5), 5e-5);
  EXPECT_THROW(lr_at_step(2001, 2000, 100, 1e-4, 1e-5), ProtocolError);
}

TEST(Schedule, ContinuousAndDecaying) {
  const std::size_t total = 500, warmup = 40;
  double prev = lr_at_step(warmup, total, warmup, 1e-3, 1e-4);
  for (std::size_t s = warmup + 1; s <= total; ++s) {
    const double cur = lr_at_step(s, total, warmup, 1e-3, 1e-4);
    EXPECT_LE(cur, prev);
    EXPECT_LT(prev - cur, 1e-5);
    prev = cur;
  }
  for (std::size_t s = 1; s <= warmup; ++s) {
    EXPECT_LT(lr_at_step(s, total, warmup, 1e-3, 1e-4) - lr_at_step(s - 1, total, warmup, 1e-3, 1e-4), 1e-4 + 1e-18);
  }
}

TEST(Schedule, ScaleLr) {
  EXPECT_EQ(scale_lr(100, 100, 1e-4), 1e-4);
  EXPECT_DOUBLE_EQ(scale_lr(400, 100, 1e-4), 5e-5);
  EXPECT_NEAR(scale_lr(200, 100, 1e-4), 7.0710678118654752e-5, 1e-19);
  EXPECT_THROW(scale_lr(0, 100, 1e-4), ProtocolError);
}

TEST(Adam, Examples) {
  num::ParamStore p;
  auto& theta = p.add("theta", num::Tensor({1}, {1.0}));
  theta.grad = {0.0};
  OptState st;
  optimizer_step(p, st, 0.1, AdamConfig{0.9, 0.999, 1e-8, 0.0});
  EXPECT_EQ(theta.values[0], 1.0);

  OptState st2;
  theta.grad = {1.0};
  optimizer_step(p, st2, 0.1, AdamConfig{0.9, 0.999, 1e-8, 0.0});
  // First step: mhat = 1, vhat = 1.
  EXPECT_NEAR(theta.values[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);

  theta.values = {2.0};
  theta.grad = {0.0};
  OptState st3;
  optimizer_step(p, st3, 0.05, AdamConfig{0.9, 0.999, 1e-8, 0.2});
  EXPECT_NEAR(theta.values[0], 2.0 * (1.0 - 0.05 * 0.2), 1e-15);
}

TEST(Adam, SecondStepByHand) {
  num::ParamStore p;
  auto& theta = p.add("theta", num::Tensor({2}, {0.5, -1.0}));
  OptState st;
  const AdamConfig cfg;
  theta.grad = {0.2, -0.4};
  optimizer_step(p, st, 0.01, cfg);
  theta.grad = {-0.1, 0.3};
  optimizer_step(p, st, 0.01, cfg);
  std::vector<double> want{0.5, -1.0};
  const std::vector<std::vector<double>> grads{{0.2, -0.4}, {-0.1, 0.3}};
  for (std::size_t i = 0; i < 2; ++i) {
    double m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
      const double g = grads[t - 1][i];
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      want[i] -= 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * want[i]);
    }
    EXPECT_NEAR(theta.values[i], want[i], 1e-15);
  }
  EXPECT_EQ(st.t, 2u);
}

TEST(Adam, ShapeMismatch) {
  num::ParamStore p;
  auto& theta = p.add("theta", num::Tensor({2}, {0.5, -1.0}));
  theta.grad = {0.0, 0.0};
  OptState st;
  st.m["theta"] = {0.0};
  EXPECT_THROW(optimizer_step(p, st, 0.1, AdamConfig{}), DimensionError);
  OptState st2;
  st2.m["other"] = {0.0};
  EXPECT_THROW(optimizer_step(p, st2, 0.1, AdamConfig{}), DimensionError);
}

TEST(Clip, GlobalNorm) {
  num::ParamStore p;
  auto& a = p.add("a", num::Tensor({2}));
  auto& b = p.add("b", num::Tensor({1}));
  a.grad = {3.0, 0.0};
  b.grad = {4.0};
  EXPECT_DOUBLE_EQ(clip_grad_norm(p, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(a.grad[0], 0.6);
  EXPECT_DOUBLE_EQ(b.grad[0], 0.8);
  EXPECT_DOUBLE_EQ(clip_grad_norm(p, 10.0), 1.0);
  EXPECT_DOUBLE_EQ(a.grad[0], 0.6);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  RunConfig c = quick_config(50, 4);
  c.use_moe = true;
  c.hybrid.lambda = 0.3;
  c.stage = Stage::distill;
  const auto back = RunConfig::from_json(c.to_json(), RunConfig{}, "test");
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.digest(), c.digest());
  EXPECT_EQ(c.digest().size(), 16u);
  nlohmann::json bad = c.to_json();
  bad["learning_rate"] = 0.1;
  EXPECT_THROW(RunConfig::from_json(bad, RunConfig{}, "test"), ProtocolError);
  RunConfig w = quick_config(50, 4);
  w.warmup_steps = 50;
  EXPECT_THROW(w.validate(), ProtocolError);
  w = quick_config(50, 4);
  w.final_lr = 1.0;
  EXPECT_THROW(w.validate(), ProtocolError);
  EXPECT_THROW(parse_stage("pretrain"), ProtocolError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto ds = toy::dataset(30, 1);
  auto cfg = quick_config(3, 5);
  cfg.batch_size = 8;
  const auto res = run_stage(cfg, {&ds, nullptr, nullptr});
  const auto dir = scratch_dir("roundtrip");
  res.checkpoint.save(dir.string());
  const auto back = Checkpoint::load(dir.string());
  EXPECT_TRUE(same_params(back.params, res.checkpoint.params));
  EXPECT_EQ(back.step, 3u);
  EXPECT_EQ(back.config_digest, cfg.digest());
  EXPECT_EQ(back.opt.t, res.checkpoint.opt.t);
  EXPECT_EQ(back.opt.m, res.checkpoint.opt.m);
  EXPECT_EQ(back.opt.v, res.checkpoint.opt.v);

  auto m1 = res.checkpoint.model();
  auto m2 = back.model();
  const auto rows = toy::iota(10);
  EXPECT_EQ(objectives::predict_logits(m1, ds, rows).values, objectives::predict_logits(m2, ds, rows).values);
  EXPECT_EQ(objectives::embed_rows(m1, ds, rows).values, objectives::embed_rows(m2, ds, rows).values);
  fs::remove_all(dir);
  EXPECT_THROW(Checkpoint::load(dir.string()), ProtocolError);
}

TEST(RunStage, ZeroStepsIsInitialization) {
  const auto ds = toy::dataset(20, 2);
  auto cfg = quick_config(0, 6);
  cfg.warmup_steps = 0;
  const auto res = run_stage(cfg, {&ds, nullptr, nullptr});
  const auto fresh = objectives::Model::create(objectives::make_model_spec(
      ds, encoder::preset("base"), embed::MaskMode::shared, std::nullopt, 0, 6));
  EXPECT_TRUE(same_params(res.checkpoint.params, fresh.params));
  EXPECT_TRUE(res.metrics.empty());
  EXPECT_EQ(res.checkpoint.step, 0u);
}

TEST(RunStage, Deterministic) {
  const auto data = small_synth(3);
  const auto cfg = quick_config(6, 7);
  const auto a = run_stage(cfg, {&data.labeled, &data.unlabeled, nullptr});
  const auto b = run_stage(cfg, {&data.labeled, &data.unlabeled, nullptr});
  EXPECT_TRUE(same_params(a.checkpoint.params, b.checkpoint.params));
  EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(b.metrics));
  EXPECT_EQ(a.checkpoint.opt.m, b.checkpoint.opt.m);
  // Parameters and optimizer state stay float-valued.
  for (const auto& [_, t] : a.checkpoint.params) {
    for (const double v : t.values) ASSERT_EQ(v, static_cast<double>(static_cast<float>(v)));
  }
}

TEST(RunStage, LossDecreasesOnSyntheticData) {
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    const auto data = small_synth(seed);
    const auto res = run_stage(quick_config(200, seed), {&data.labeled, &data.unlabeled, nullptr});
    ASSERT_EQ(res.metrics.size(), 200u);
    const double first = res.metrics.front().losses.combined;
    const double last = res.metrics.back().losses.combined;
    EXPECT_LT(last, first) << "seed " << seed;
    for (const auto& row : res.metrics) ASSERT_TRUE(std::isfinite(row.losses.combined));
  }
}

TEST(RunStage, FinetuneNeverReadsUnlabeledRows) {
  const auto data = small_synth(4);
  const auto pre = run_stage(quick_config(4, 8), {&data.labeled, &data.unlabeled, nullptr});
  EXPECT_GT(pre.audit.unlabeled_rows, 0u);
  auto ft = quick_config(4, 8);
  ft.stage = Stage::finetune;
  const auto res = run_stage(ft, {&data.labeled, &data.unlabeled, nullptr}, &pre.checkpoint);
  EXPECT_EQ(res.audit.unlabeled_rows, 0u);
  EXPECT_EQ(res.audit.labeled_rows, 4u * 32u);
  EXPECT_EQ(res.checkpoint.step, 8u);
  for (const auto& row : res.metrics) {
    EXPECT_EQ(row.lr, ft.final_lr);
    EXPECT_TRUE(std::isnan(row.losses.l_mlm));
  }
}

TEST(RunStage, ProtocolErrors) {
  const auto ds = toy::dataset(20, 3);
  auto cfg = quick_config(2, 9);
  cfg.stage = Stage::distill;
  EXPECT_THROW(run_stage(cfg, {&ds, nullptr, nullptr}), ProtocolError);
  cfg.stage = Stage::finetune;
  EXPECT_THROW(run_stage(cfg, {&ds, nullptr, nullptr}), ProtocolError);
  cfg.stage = Stage::hybrid_pretrain;
  const auto unlabeled = ds.without_labels();
  EXPECT_THROW(run_stage(cfg, {&unlabeled, nullptr, nullptr}), ProtocolError);
}

TEST(RunStage, DistillAgainstCache) {
  const auto ds = toy::dataset(40, 4);
  auto teacher = toy::model(ds, std::nullopt, 0, 5, 1);
  const auto before = teacher.params;
  const auto cache = distill::cache_teacher(teacher, ds);
  auto cfg = quick_config(5, 10);
  cfg.stage = Stage::distill;
  cfg.batch_size = 8;
  const auto res = run_stage(cfg, {&ds, nullptr, &cache});
  EXPECT_EQ(res.checkpoint.spec.align_width, cache.d_t);
  EXPECT_TRUE(same_params(teacher.params, before));
  for (const auto& row : res.metrics) {
    EXPECT_TRUE(std::isfinite(row.losses.l_align));
    EXPECT_GE(row.losses.l_align, 0.0);
    EXPECT_LE(row.losses.l_align, 2.0);
  }
}

TEST(Metrics, CsvFormat) {
  MetricsRow r;
  r.step = 1;
  r.lr = 0.5;
  r.losses.l_ce_cls = 0.25;
  r.losses.combined = 0.25;
  EXPECT_EQ(metrics_csv({r}), "step,lr,l_mlm,l_ce_recon,l_ce_cls,l_align,combined\n1,0.5,nan,nan,0.25,nan,0.25\n");
}
