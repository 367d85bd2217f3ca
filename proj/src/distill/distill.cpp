#include "masktab/distill/distill.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "masktab/errors.hpp"
#include "masktab/io/f32.hpp"
#include "masktab/numerics/init.hpp"

namespace masktab::distill {

namespace fs = std::filesystem;
using nlohmann::json;
using num::Tensor;
using num::Var;

void DistillConfig::validate() const {
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0)) {
    throw ProtocolError("distill: weights must be non-negative");
  }
  if (std::abs(lambda1 + lambda2 + lambda3 - 1.0) > 1e-9) throw ProtocolError("distill: weights must sum to 1");
}

const double* TeacherCache::find(std::int64_t row_id) const {
  if (index_.size() != row_ids.size()) {
    index_.clear();
    for (std::size_t i = 0; i < row_ids.size(); ++i) index_.emplace(row_ids[i], i);
  }
  const auto it = index_.find(row_id);
  if (it == index_.end()) throw ProtocolError("teacher cache has no row id " + std::to_string(row_id));
  return embeddings.data() + it->second * d_t;
}

void TeacherCache::save(const std::string& dir) const {
  fs::create_directories(dir);
  json manifest{{"teacher_digest", teacher_digest}, {"d_t", d_t}, {"row_count", row_ids.size()}, {"row_ids", row_ids}};
  std::ofstream(fs::path(dir) / "manifest.json", std::ios::binary) << manifest.dump(2) << "\n";
  io::write_f32(fs::path(dir) / "embeddings.f32", embeddings);
}

TeacherCache TeacherCache::load(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw ProtocolError("teacher cache not found at '" + manifest_path.string() + "'");
  TeacherCache c;
  try {
    const json m = json::parse(in);
    c.teacher_digest = m.at("teacher_digest").get<std::string>();
    c.d_t = m.at("d_t").get<std::size_t>();
    c.row_ids = m.at("row_ids").get<std::vector<std::int64_t>>();
    if (m.at("row_count").get<std::size_t>() != c.row_ids.size()) {
      throw ProtocolError("teacher cache: row_count does not match row_ids");
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("teacher cache manifest: ") + e.what());
  }
  c.embeddings = io::read_f32(fs::path(dir) / "embeddings.f32");
  if (c.embeddings.size() != c.row_ids.size() * c.d_t) throw ProtocolError("teacher cache: payload size mismatch");
  return c;
}

std::string params_digest(const num::ParamStore& params) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const auto& [_, t] : params) {
    for (const double v : t.values) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                             static_cast<char>((bits >> 16) & 0xff), static_cast<char>(bits >> 24)};
      hash = fnv1a64(std::string_view(bytes, 4), hash);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

TeacherCache cache_teacher(objectives::Model& teacher, const data::Dataset& ds) {
  std::vector<std::size_t> order(ds.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ds.row_id(a) < ds.row_id(b); });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (ds.row_id(order[i]) == ds.row_id(order[i - 1])) {
      throw ProtocolError("cache_teacher: duplicate row id " + std::to_string(ds.row_id(order[i])));
    }
  }
  TeacherCache c;
  c.teacher_digest = params_digest(teacher.params);
  c.d_t = teacher.spec.encoder.d_model;
  for (const std::size_t r : order) c.row_ids.push_back(ds.row_id(r));
  Tensor z = objectives::embed_rows(teacher, ds, order);
  num::quantize_f32(z);
  c.embeddings = std::move(z.values);
  return c;
}

TeacherCache ensure_teacher_cache(objectives::Model& teacher, const data::Dataset& ds, const std::string& dir) {
  const std::string digest = params_digest(teacher.params);
  if (fs::exists(fs::path(dir) / "manifest.json")) {
    TeacherCache existing = TeacherCache::load(dir);
    if (existing.d_t != teacher.spec.encoder.d_model) {
      throw ProtocolError("teacher cache at '" + dir + "' has width " + std::to_string(existing.d_t) +
                          ", teacher width is " + std::to_string(teacher.spec.encoder.d_model));
    }
    if (existing.teacher_digest == digest) {
      bool covers = true;
      for (std::size_t r = 0; r < ds.rows() && covers; ++r) {
        covers = std::binary_search(existing.row_ids.begin(), existing.row_ids.end(), ds.row_id(r));
      }
      if (covers) return existing;
    }
  }
  TeacherCache c = cache_teacher(teacher, ds);
  c.save(dir);
  return c;
}

double align_loss(std::span<const double> z, std::span<const double> weight, std::span<const double> bias,
                  std::span<const double> e_t) {
  const std::size_t ds = z.size(), dt = e_t.size();
  if (weight.size() != dt * ds || bias.size() != dt) throw DimensionError("align_loss: alignment head shape mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < dt; ++i) {
    double a = bias[i];
    for (std::size_t j = 0; j < ds; ++j) a += weight[i * ds + j] * z[j];
    dot += a * e_t[i];
    na += a * a;
    nb += e_t[i] * e_t[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) return 1.0;
  return 1.0 - dot / (na * nb);
}

Var align_loss(num::Tape& tape, num::ParamStore& params, Var z, const Tensor& targets) {
  const std::size_t n = z.shape().at(0);
  if (targets.rank() != 2 || targets.shape[0] != n) throw DimensionError("align_loss: one target per row required");
  Var za = num::add_row(num::matmul_nt(z, tape.param(params.at("align.weight"))), tape.param(params.at("align.bias")));
  Var cos = num::cosine_similarity(za, tape.constant(targets));
  return num::add_scalar(num::scale(num::mean(cos), -1.0), 1.0);
}

Tensor teacher_targets(const TeacherCache& cache, const data::Dataset& ds, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), cache.d_t});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* e = cache.find(ds.row_id(rows[i]));
    std::copy(e, e + cache.d_t, out.values.begin() + static_cast<std::ptrdiff_t>(i * cache.d_t));
  }
  return out;
}

double distill_loss(double l_mlm, double l_ce, double l_align, const DistillConfig& cfg) {
  cfg.validate();
  return cfg.lambda1 * l_mlm + cfg.lambda2 * l_ce + cfg.lambda3 * l_align;
}

Var distill_loss(Var l_mlm, Var l_ce, Var l_align, const DistillConfig& cfg) {
  cfg.validate();
  Var out = num::scale(l_ce, cfg.lambda2);
  if (cfg.lambda1 != 0.0) out = num::add(num::scale(l_mlm, cfg.lambda1), out);
  if (cfg.lambda3 != 0.0) out = num::add(out, num::scale(l_align, cfg.lambda3));
  return out;
}

}  // namespace masktab::distill
