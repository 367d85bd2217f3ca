#include <gtest/gtest.h>

#include <cmath>

#include "masktab/encoder/encoder.hpp"
#include "masktab/errors.hpp"
#include "masktab/numerics/grad_check.hpp"
#include "toy.hpp"

using namespace masktab;
using namespace masktab::encoder;
using num::Tensor;

namespace {

using Mat = std::vector<std::vector<double>>;

Tensor random_tensor(num::Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values) v = rng.normal(0.0, sd);
  return t;
}

Mat to_mat(const Tensor& t) {
  Mat m(t.shape[0], std::vector<double>(t.shape[1]));
  for (std::size_t i = 0; i < t.shape[0]; ++i) {
    for (std::size_t j = 0; j < t.shape[1]; ++j) m[i][j] = t.at(i, j);
  }
  return m;
}

Mat affine(const Mat& x, const Tensor& w, const Tensor& b) {
  Mat out(x.size(), std::vector<double>(w.shape[1], 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < w.shape[1]; ++j) {
      double s = b.values[j];
      for (std::size_t k = 0; k < x[i].size(); ++k) s += x[i][k] * w.at(k, j);
      out[i][j] = s;
    }
  }
  return out;
}

Mat norm(const Mat& x, const Tensor& g, const Tensor& b) {
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mu = 0, var = 0;
    for (double v : x[i]) mu += v;
    mu /= static_cast<double>(x[i].size());
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x[i].size());
    for (std::size_t j = 0; j < x[i].size(); ++j) out[i][j] = g.values[j] * (x[i][j] - mu) / std::sqrt(var + 1e-5) + b.values[j];
  }
  return out;
}

}  // namespace

TEST(Presets, ShapesAndParamCounts) {
  const auto b = preset("base");
  EXPECT_EQ(b.layers, 2u);
  EXPECT_EQ(b.heads, 4u);
  EXPECT_EQ(b.kv, 8u);
  EXPECT_EQ(b.d_model, 32u);
  EXPECT_EQ(preset("XL").layers, 4u);
  EXPECT_EQ(preset("XL").d_model, 64u);
  // 2 × (4·32 + 3·(32·32+32) + (32·32+32) + (32·128+128) + (128·32+32)) + 32 + 1
  EXPECT_EQ(param_count(b), 25441u);
  EXPECT_THROW(preset("XXL"), ProtocolError);
}

TEST(ParamCount, ZeroLayerAndDoubling) {
  EncoderConfig c{"z", 0, 1, 1, 4, 4};
  EXPECT_EQ(param_count(c), 5u);
  auto one = preset("base");
  one.layers = 1;
  auto two = one;
  two.layers = 2;
  EXPECT_EQ(param_count(two) - param_count(two, 1) + (param_count(two) - 33), 2 * (param_count(one) - 33));
}

TEST(ParamCount, MatchesInitializedTensors) {
  for (const auto& name : preset_names()) {
    const auto c = preset(name);
    num::ParamStore p;
    init_encoder_params(p, c, 1);
    init_head_params(p, c.d_model, 3, 1);
    EXPECT_EQ(p.total_size(), param_count(c, 3)) << name;
  }
}

TEST(EncoderForward, ZeroLayerIsIdentity) {
  Rng rng(1);
  num::ParamStore p;
  EncoderConfig c{"z", 0, 1, 1, 4, 4};
  num::Tape tape;
  auto H = tape.constant(random_tensor({6, 4}, rng));
  EXPECT_EQ(encoder_forward(tape, p, c, H, 2, 3).value().values, H.value().values);
}

TEST(EncoderForward, WidthMismatchIsDimensionError) {
  Rng rng(1);
  num::ParamStore p;
  const auto c = toy::tiny_encoder();
  init_encoder_params(p, c, 1);
  num::Tape tape;
  auto H = tape.constant(random_tensor({3, 5}, rng));
  EXPECT_THROW(encoder_forward(tape, p, c, H, 1, 3), DimensionError);
}

TEST(EncoderForward, MatchesStepByStepOracle) {
  EncoderConfig c{"hand", 1, 1, 4, 4, 1};
  num::ParamStore p;
  init_encoder_params(p, c, 2);
  toy::jitter(p, 3, 0.5);
  Rng rng(4);
  const Tensor Ht = random_tensor({2, 4}, rng);
  num::Tape tape;
  const Tensor Z = encoder_forward(tape, p, c, tape.constant(Ht), 1, 2).value();

  auto P = [&](const std::string& n) { return p.at("encoder.layer0." + n); };
  const Mat H = to_mat(Ht);
  const Mat a = norm(H, P("ln1.gamma"), P("ln1.beta"));
  const Mat q = affine(a, P("attn.q.weight"), P("attn.q.bias"));
  const Mat k = affine(a, P("attn.k.weight"), P("attn.k.bias"));
  const Mat v = affine(a, P("attn.v.weight"), P("attn.v.bias"));
  Mat att(2, std::vector<double>(4, 0.0));
  for (int i = 0; i < 2; ++i) {
    double s[2];
    for (int j = 0; j < 2; ++j) {
      s[j] = 0;
      for (int t = 0; t < 4; ++t) s[j] += q[i][t] * k[j][t];
      s[j] /= 2.0;  // sqrt(kv)
    }
    const double m = std::max(s[0], s[1]);
    const double e0 = std::exp(s[0] - m), e1 = std::exp(s[1] - m);
    for (int t = 0; t < 4; ++t) att[i][t] = (e0 * v[0][t] + e1 * v[1][t]) / (e0 + e1);
  }
  const Mat o = affine(att, P("attn.o.weight"), P("attn.o.bias"));
  Mat x = H;
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 4; ++t) x[i][t] += o[i][t];
  }
  Mat f = affine(norm(x, P("ln2.gamma"), P("ln2.beta")), P("ffn.in.weight"), P("ffn.in.bias"));
  for (auto& row : f) {
    for (auto& u : row) u = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
  }
  const Mat y = affine(f, P("ffn.out.weight"), P("ffn.out.bias"));
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 4; ++t) EXPECT_NEAR(Z.at(i, t), x[i][t] + y[i][t], 1e-12);
  }
}

TEST(EncoderForward, PermutationEquivariantAndDeterministic) {
  const auto c = toy::tiny_encoder(2);
  num::ParamStore p;
  init_encoder_params(p, c, 5);
  toy::jitter(p, 6);
  Rng rng(7);
  const Tensor H = random_tensor({5, 4}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor Hp({5, 4});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) Hp.at(i, j) = H.at(perm[i], j);
  }
  num::Tape tape;
  const Tensor Z = encoder_forward(tape, p, c, tape.constant(H), 1, 5).value();
  const Tensor Zp = encoder_forward(tape, p, c, tape.constant(Hp), 1, 5).value();
  const Tensor Z2 = encoder_forward(tape, p, c, tape.constant(H), 1, 5).value();
  EXPECT_EQ(Z.values, Z2.values);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(Zp.at(i, j), Z.at(perm[i], j), 1e-12);
  }
}

TEST(EncoderForward, FiniteForBoundedInputs) {
  const auto c = preset("base");
  num::ParamStore p;
  init_encoder_params(p, c, 8);
  Rng rng(9);
  Tensor H = random_tensor({8, 32}, rng);
  for (std::size_t i = 0; i < 8; ++i) {
    double n = 0;
    for (std::size_t j = 0; j < 32; ++j) n += H.at(i, j) * H.at(i, j);
    for (std::size_t j = 0; j < 32; ++j) H.at(i, j) *= 10.0 / std::sqrt(n);
  }
  num::Tape tape;
  for (double v : encoder_forward(tape, p, c, tape.constant(H), 2, 4).value().values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Pool, Examples) {
  num::Tape tape;
  auto one = tape.constant(Tensor({1, 3}, std::vector<double>{1, 2, 3}));
  EXPECT_EQ(pool(one, 1, 1).value().values, (std::vector<double>{1, 2, 3}));
  auto pm = tape.constant(Tensor({2, 2}, std::vector<double>{0.5, -2, -0.5, 2}));
  EXPECT_EQ(pool(pm, 1, 2).value().values, (std::vector<double>{0, 0}));
  Rng rng(3);
  const Tensor Z = random_tensor({3, 4}, rng);
  const auto z = pool(tape.constant(Z), 1, 3).value();
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 3; ++i) s += Z.at(i, j);
    EXPECT_NEAR(z.values[j], s / 3.0, 1e-15);
  }
}

TEST(Classify, Examples) {
  num::ParamStore p;
  init_head_params(p, 2, 1, 1);
  p.at("head.weight").values = {0, 0};
  p.at("head.bias").values = {0.7};
  num::Tape tape;
  auto z = tape.constant(Tensor({1, 2}, std::vector<double>{3, -4}));
  EXPECT_EQ(classify(tape, p, z).item(), 0.7);
  p.at("head.weight").values = {0.5, 0.25};
  p.at("head.bias").values = {0.0};
  EXPECT_EQ(classify(tape, p, z).item(), 0.5);
  num::ParamStore p3;
  init_head_params(p3, 2, 3, 1);
  EXPECT_EQ(classify(tape, p3, z).shape(), (num::Shape{1, 3}));
}

TEST(EncoderGradient, ClassifierStackPassesGradCheck) {
  const auto ds = toy::dataset(6, 11);
  auto m = toy::model(ds, std::nullopt, 0, 3, 2);
  toy::jitter(m.params, 12);
  const auto rows = toy::iota(6);
  auto loss = [&](num::Tape& tape) {
    const auto f = objectives::forward(tape, m, ds, rows);
    return objectives::ce_loss(f.logits, ds.labels(), data::LabelKind::binary);
  };
  EXPECT_LT(num::grad_check(loss, m.params), 1e-5);
}
