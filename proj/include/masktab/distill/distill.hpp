#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "masktab/objectives/model.hpp"

namespace masktab::distill {

struct DistillConfig {
  double lambda1 = 0.2;  // MLM
  double lambda2 = 0.4;  // CE
  double lambda3 = 0.4;  // alignment

  /// Throws ProtocolError unless all weights are ≥ 0 and sum to 1 within 1e-9.
  void validate() const;
};

/// Teacher row embeddings keyed by row id.
struct TeacherCache {
  std::string teacher_digest;
  std::size_t d_t = 0;
  std::vector<std::int64_t> row_ids;  // ascending
  std::vector<double> embeddings;     // row_ids.size() × d_t, float-valued

  std::size_t rows() const { return row_ids.size(); }
  /// Pointer to the embedding of `row_id`; throws ProtocolError when absent.
  const double* find(std::int64_t row_id) const;

  /// Directory with manifest.json and embeddings.f32.
  void save(const std::string& dir) const;
  static TeacherCache load(const std::string& dir);

 private:
  mutable std::unordered_map<std::int64_t, std::size_t> index_;
};

/// FNV-1a 64 over the little-endian float32 payload of a parameter store,
/// in name order, as 16 hex digits.
std::string params_digest(const num::ParamStore& params);

/// Natural-path pooled representation of every row of `ds` (masking off),
/// rounded to float32. Throws ProtocolError on duplicate row ids.
TeacherCache cache_teacher(objectives::Model& teacher, const data::Dataset& ds);

/// Writes the cache to `dir` unless an identical one is present. A cache of
/// the same teacher but a different width is a protocol error; a cache of
/// another teacher digest is replaced.
TeacherCache ensure_teacher_cache(objectives::Model& teacher, const data::Dataset& ds, const std::string& dir);

/// 1 − cos(W_a·z + b_a, e_t); 1 when either vector is degenerate.
double align_loss(std::span<const double> z_student, std::span<const double> weight, std::span<const double> bias,
                  std::span<const double> e_t);

/// Mean alignment loss over a batch of student representations z (rows × d_s)
/// using "align.weight" (d_t × d_s) and "align.bias".
num::Var align_loss(num::Tape& tape, num::ParamStore& params, num::Var z, const num::Tensor& targets);

/// Gathers cached teacher vectors for dataset rows.
num::Tensor teacher_targets(const TeacherCache& cache, const data::Dataset& ds, std::span<const std::size_t> rows);

double distill_loss(double l_mlm, double l_ce, double l_align, const DistillConfig& cfg);
num::Var distill_loss(num::Var l_mlm, num::Var l_ce, num::Var l_align, const DistillConfig& cfg);

}  // namespace masktab::distill
