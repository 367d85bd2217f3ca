#include <gtest/gtest.h>

#include <cmath>

#include "masktab/errors.hpp"
#include "masktab/numerics/grad_check.hpp"
#include "masktab/objectives/model.hpp"
#include "toy.hpp"

using namespace masktab;
using namespace masktab::objectives;
using num::Tensor;
using num::Var;

namespace {

double ce_of(std::vector<double> logits, std::vector<double> y, data::LabelKind kind, std::size_t cols = 1) {
  num::Tape tape;
  const std::size_t rows = logits.size() / cols;
  Var l = ce_loss(tape.constant(Tensor({rows, cols}, std::move(logits))), y, kind);
  return l.item();
}

double log_sum_exp(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += std::exp(x);
  return std::log(s);
}

}  // namespace

TEST(CeLoss, BinaryAtZeroIsLn2) {
  EXPECT_NEAR(ce_of({0.0}, {1.0}, data::LabelKind::binary), std::log(2.0), 1e-15);
  EXPECT_NEAR(ce_of({0.0}, {0.0}, data::LabelKind::binary), std::log(2.0), 1e-15);
}

TEST(CeLoss, BinaryConfidentCorrectGoesToZero) {
  EXPECT_LT(ce_of({10.0}, {1.0}, data::LabelKind::binary), 1e-4);
  EXPECT_NEAR(ce_of({10.0}, {1.0}, data::LabelKind::binary), std::log1p(std::exp(-10.0)), 1e-15);
  double prev = ce_of({0.0}, {1.0}, data::LabelKind::binary);
  for (double z = 0.5; z <= 10.0; z += 0.5) {
    const double cur = ce_of({z}, {1.0}, data::LabelKind::binary);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  // Large logits stay finite.
  EXPECT_NEAR(ce_of({-800.0}, {1.0}, data::LabelKind::binary), 800.0, 1e-9);
}

TEST(CeLoss, RegressionAndMulticlass) {
  EXPECT_EQ(ce_of({1.5, -2.0}, {1.5, -2.0}, data::LabelKind::regression), 0.0);
  EXPECT_NEAR(ce_of({1.0, 3.0}, {0.0, 1.0}, data::LabelKind::regression), (1.0 + 4.0) / 2.0, 1e-15);
  EXPECT_NEAR(ce_of({0, 0, 0, 0}, {2.0}, data::LabelKind::multiclass, 4), std::log(4.0), 1e-15);
  // Hand value: logits (1, 2, 3), class 0.
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(ce_of({1, 2, 3}, {0.0}, data::LabelKind::multiclass, 3), lse - 1.0, 1e-14);
  EXPECT_THROW(ce_of({1, 2, 3}, {3.0}, data::LabelKind::multiclass, 3), ProtocolError);
}

TEST(HybridBatchLoss, Examples) {
  const std::vector<double> sup{0.4, 0.6}, unsup{1.0, 3.0}, none;
  EXPECT_NEAR(hybrid_batch_loss(sup, unsup), 2.5, 1e-15);
  EXPECT_NEAR(hybrid_batch_loss(sup, none), 0.5, 1e-15);
  EXPECT_NEAR(hybrid_batch_loss(none, unsup), 2.0, 1e-15);
  EXPECT_THROW(hybrid_batch_loss(none, none), ProtocolError);
}

TEST(Combine, IsTheConfiguredLinearMix) {
  HybridConfig cfg;
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    cfg.lambda = rng.uniform();
    cfg.recon_path_ce_weight = rng.uniform();
    const double a = rng.uniform(0, 3), b = rng.uniform(0, 3), c = rng.uniform(0, 3);
    const double want =
        cfg.lambda * a + (1 - cfg.lambda) * (cfg.recon_path_ce_weight * b + (1 - cfg.recon_path_ce_weight) * c);
    EXPECT_NEAR(combine(cfg, a, b, c), want, 1e-12);
  }
  cfg.lambda = 0.0;
  cfg.recon_path_ce_weight = 0.0;
  EXPECT_EQ(combine(cfg, std::nan(""), std::nan(""), 0.7), 0.7);
  cfg.validate();
  cfg.lambda = 1.5;
  EXPECT_THROW(cfg.validate(), ProtocolError);
}

// Hand-set head: identity weight, zero bias, so the decoder sees z itself.
class MlmHand : public ::testing::Test {
 protected:
  void SetUp() override {
    ds = toy::dataset(8, 1, 0.0);
    m = toy::model(ds);
    const std::size_t h = m.embedder.h();
    auto& w = m.params.at("mlm.weight");
    std::fill(w.values.begin(), w.values.end(), 0.0);
    for (std::size_t i = 0; i < h; ++i) w.at(i, i) = 1.0;
  }
  data::Dataset ds;
  Model m;
};

TEST_F(MlmHand, NumericalExactPredictionIsZero) {
  const std::size_t h = m.embedder.h();
  // z = v·e_name so the decoded value equals v.
  const double v = 0.8;
  Tensor Z({1, h});
  for (std::size_t j = 0; j < h; ++j) Z.values[j] = v * m.embedder.names().at(0, j);
  MaskedTokens tok;
  tok.positions = {0};
  tok.targets = {{0, v}};
  tok.weights = {1.0};
  num::Tape tape;
  EXPECT_NEAR(mlm_loss(tape, m.params, m.embedder, tape.constant(Z), tok).item(), 0.0, 1e-15);
}

TEST_F(MlmHand, UniformCategoricalIsLnVocab) {
  const std::size_t h = m.embedder.h();
  MaskedTokens tok;
  tok.positions = {0};
  tok.targets = {{3, 2.0}};  // channel, vocab 4
  tok.weights = {1.0};
  num::Tape tape;
  EXPECT_NEAR(mlm_loss(tape, m.params, m.embedder, tape.constant(Tensor({1, h})), tok).item(), std::log(4.0), 1e-15);
}

TEST_F(MlmHand, TwoMaskedCellsByHand) {
  const std::size_t h = m.embedder.h();
  Rng rng(9);
  Tensor Z({4, h});
  for (auto& v : Z.values) v = rng.normal();
  auto& bias = m.params.at("mlm.bias");
  for (auto& b : bias.values) b = rng.normal(0, 0.1);
  // Token 1 holds "age" (numerical) and token 2 holds "region" (categorical).
  MaskedTokens tok;
  tok.positions = {1, 2};
  tok.targets = {{1, -0.3}, {2, 1.0}};
  tok.weights = {0.5, 0.5};

  std::vector<double> g1(h), g2(h);
  for (std::size_t j = 0; j < h; ++j) {
    g1[j] = Z.at(1, j) + bias.values[j];
    g2[j] = Z.at(2, j) + bias.values[j];
  }
  double pred = 0.0;
  for (std::size_t j = 0; j < h; ++j) pred += g1[j] * m.embedder.names().at(1, j);
  const double term1 = (pred + 0.3) * (pred + 0.3);
  const auto& table = m.params.at("embed.cat.table");
  const std::size_t off = m.embedder.category_offset(2);
  std::vector<double> logits(3, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < h; ++j) logits[c] += g2[j] * table.at(off + c, j);
  }
  const double term2 = log_sum_exp(logits) - logits[1];

  num::Tape tape;
  const double got = mlm_loss(tape, m.params, m.embedder, tape.constant(Z), tok).item();
  EXPECT_NEAR(got, 0.5 * (term1 + term2), 1e-12);
}

TEST_F(MlmHand, EmptyMaskIsZero) {
  num::Tape tape;
  EXPECT_EQ(mlm_loss(tape, m.params, m.embedder, tape.constant(Tensor({2, m.embedder.h()})), {}).item(), 0.0);
}

TEST(Twin, RateZeroPathsAreBitwiseEqual) {
  const auto ds = toy::dataset(10, 2);
  auto m = toy::model(ds);
  toy::jitter(m.params, 4);
  const auto rows = toy::iota(10);
  HybridConfig cfg;
  MaskContext ctx{7, 1, 11, 0.75, 0.0};
  num::Tape tape;
  const auto out = twin_forward(tape, m, ds, rows, cfg, ctx);
  EXPECT_EQ(out.values.l_ce_recon, out.values.l_ce_cls);
  EXPECT_EQ(out.values.l_mlm, 0.0);

  const auto masks = sample_masks(ds, rows, cfg, ctx);
  num::Tape ta, tb;
  const auto a = m.embedder.tokenize(ta, m.params, ds, rows, masks);
  const auto b = m.embedder.tokenize(tb, m.params, ds, rows);
  EXPECT_EQ(a.H.value().values, b.H.value().values);
}

TEST(Twin, LambdaExtremes) {
  const auto ds = toy::dataset(12, 3);
  auto m = toy::model(ds);
  toy::jitter(m.params, 5);
  const auto rows = toy::iota(12);
  MaskContext ctx{7, 1, 11, 0.75, 0.4};
  HybridConfig cfg;
  cfg.lambda = 1.0;
  {
    num::Tape tape;
    const auto out = twin_forward(tape, m, ds, rows, cfg, ctx);
    EXPECT_EQ(out.values.combined, out.values.l_mlm);
    EXPECT_GT(out.values.l_mlm, 0.0);
  }
  cfg.lambda = 0.0;
  cfg.recon_path_ce_weight = 0.0;
  {
    num::Tape tape;
    const auto out = twin_forward(tape, m, ds, rows, cfg, ctx);
    EXPECT_EQ(out.values.combined, out.values.l_ce_cls);
    EXPECT_TRUE(std::isnan(out.values.l_mlm));  // masked path skipped
  }
}

TEST(Twin, CombinedRecomputesFromBreakdown) {
  const auto ds = toy::dataset(12, 3);
  auto m = toy::model(ds);
  toy::jitter(m.params, 6);
  const auto rows = toy::iota(12);
  Rng rng(12);
  for (int t = 0; t < 10; ++t) {
    HybridConfig cfg;
    cfg.lambda = rng.uniform();
    cfg.recon_path_ce_weight = rng.uniform();
    num::Tape tape;
    const auto out = twin_forward(tape, m, ds, rows, cfg, {7, static_cast<std::uint64_t>(t), 11, 0.75, 0.3});
    const auto& v = out.values;
    EXPECT_NEAR(v.combined, combine(cfg, v.l_mlm, v.l_ce_recon, v.l_ce_cls), 1e-12);
  }
}

TEST(Twin, MaskingShadowsStoredValues) {
  auto ds = toy::dataset(6, 4, 0.0);
  auto m = toy::model(ds);
  toy::jitter(m.params, 7);
  const auto rows = toy::iota(6);
  HybridConfig cfg;
  const MaskContext ctx{7, 1, 11, 0.75, 0.5};
  const auto masks = sample_masks(ds, rows, cfg, ctx);

  num::Tape ta;
  const auto fa = forward(ta, m, ds, rows, masks);
  const auto tokens = masked_tokens(fa.tokens, ds, rows, m.embedder, 1.0 / 6.0);
  ASSERT_FALSE(tokens.empty());
  const double la = mlm_loss(ta, m.params, m.embedder, fa.Z, tokens).item();

  // Overwrite every masked cell with a different in-range value.
  data::Dataset other(ds.schema);
  std::vector<std::optional<double>> cells(ds.features());
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t k = 0; k < ds.features(); ++k) cells[k] = ds.cell(r, k);
    for (const std::size_t k : masks[r]) {
      const bool cat = ds.schema.features[k].kind == data::FeatureKind::categorical;
      cells[k] = cat ? 0.0 + static_cast<double>((static_cast<std::size_t>(*cells[k]) + 1) % 3) : *cells[k] * 5 + 1;
    }
    other.append(cells, ds.label(r), ds.timestamp(r), ds.row_id(r));
  }
  num::Tape tb;
  const auto fb = forward(tb, m, other, rows, masks);
  EXPECT_EQ(fa.Z.value().values, fb.Z.value().values);
  EXPECT_EQ(mlm_loss(tb, m.params, m.embedder, fb.Z, tokens).item(), la);
}

TEST(Twin, GradCheckCombined) {
  const auto ds = toy::dataset(6, 5);
  auto m = toy::model(ds);
  toy::jitter(m.params, 8);
  const auto rows = toy::iota(6);
  HybridConfig cfg;
  const MaskContext ctx{7, 1, 11, 0.75, 0.5};
  auto loss = [&](num::Tape& tape) { return twin_forward(tape, m, ds, rows, cfg, ctx).combined; };
  EXPECT_LT(num::grad_check(loss, m.params), 1e-4);
}

TEST(Twin, GradCheckUnlabeledMlm) {
  const auto ds = toy::dataset(6, 6).without_labels();
  const auto labeled = toy::dataset(6, 6);
  auto m = toy::model(labeled);
  toy::jitter(m.params, 9);
  const auto rows = toy::iota(6);
  HybridConfig cfg;
  const MaskContext ctx{7, 1, 12, 0.75, 0.5};
  auto loss = [&](num::Tape& tape) { return unlabeled_mlm(tape, m, ds, rows, cfg, ctx); };
  EXPECT_LT(num::grad_check(loss, m.params), 1e-4);
}

TEST(Twin, MulticlassAndRegressionHeads) {
  for (const auto kind : {data::LabelKind::multiclass, data::LabelKind::regression}) {
    const auto ds = toy::dataset(9, 7, 0.2, kind);
    auto m = toy::model(ds);
    toy::jitter(m.params, 10);
    const auto rows = toy::iota(9);
    HybridConfig cfg;
    const MaskContext ctx{7, 1, 11, 0.75, 0.4};
    num::Tape tape;
    const auto out = twin_forward(tape, m, ds, rows, cfg, ctx);
    EXPECT_TRUE(std::isfinite(out.values.combined));
    auto loss = [&](num::Tape& t) { return twin_forward(t, m, ds, rows, cfg, ctx).combined; };
    EXPECT_LT(num::grad_check(loss, m.params), 1e-4);
  }
}

TEST(Twin, UnlabeledRowsRejected) {
  const auto ds = toy::dataset(4, 8).without_labels();
  auto m = toy::model(toy::dataset(4, 8));
  num::Tape tape;
  EXPECT_THROW(twin_forward(tape, m, ds, toy::iota(4), HybridConfig{}, {}), ProtocolError);
}
