#include "masktab/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "masktab/data/csv.hpp"
#include "masktab/errors.hpp"
#include "masktab/eval/metrics.hpp"

namespace masktab::eval {

namespace fs = std::filesystem;

const MetricRow& EvalReport::row(const std::string& split) const {
  for (const auto& r : rows) {
    if (r.split == split) return r;
  }
  throw ProtocolError("report has no split '" + split + "'");
}

std::vector<MetricRow> EvalReport::months() const {
  std::vector<MetricRow> out;
  for (const auto& r : rows) {
    if (r.split != "train" && r.split != "monthly_mean" && r.split != "pooled" && r.split != "gap") out.push_back(r);
  }
  return out;
}

namespace {

std::string fmt(double v) { return std::isnan(v) ? std::string() : data::format_double(v); }

double metric_of(const MetricRow& r, const std::string& metric) {
  if (metric == "auc") return r.auc;
  if (metric == "ks") return r.ks;
  if (metric == "rmse") return r.rmse;
  throw ProtocolError("unknown metric '" + metric + "'");
}

std::vector<std::string> metrics_for(data::LabelKind kind) {
  if (kind == data::LabelKind::regression) return {"rmse"};
  return {"auc", "ks"};
}

}  // namespace

std::string EvalReport::csv() const {
  std::ostringstream os;
  os << "split,rows,auc,ks,rmse\n";
  for (const auto& r : rows) {
    os << r.split << ',' << r.rows << ',' << fmt(r.auc) << ',' << fmt(r.ks) << ',' << fmt(r.rmse) << '\n';
  }
  return os.str();
}

std::string EvalReport::svg(const std::string& metric) const {
  const auto series = months();
  const double W = 640, H = 360, left = 60, right = 20, top = 30, bottom = 50;
  std::vector<double> ys;
  for (const auto& r : series) ys.push_back(metric_of(r, metric));
  double lo = 0.0, hi = 1.0;
  if (!ys.empty()) {
    lo = *std::min_element(ys.begin(), ys.end());
    hi = *std::max_element(ys.begin(), ys.end());
  }
  if (hi - lo < 1e-9) {
    lo -= 0.05;
    hi += 0.05;
  }
  auto x_at = [&](std::size_t i) {
    const double span = series.size() > 1 ? static_cast<double>(series.size() - 1) : 1.0;
    return left + (W - left - right) * static_cast<double>(i) / span;
  };
  auto y_at = [&](double v) { return top + (H - top - bottom) * (hi - v) / (hi - lo); };

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">monthly " << metric
     << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  for (const double v : {lo, hi}) {
    os << "<text x=\"" << left - 6 << "\" y=\"" << y_at(v) + 4
       << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">" << data::format_double(v)
       << "</text>\n";
  }
  if (!ys.empty()) {
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) os << (i ? " " : "") << x_at(i) << ',' << y_at(ys[i]);
    os << "\"/>\n";
    for (std::size_t i = 0; i < ys.size(); ++i) {
      os << "<circle cx=\"" << x_at(i) << "\" cy=\"" << y_at(ys[i]) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
      os << "<text x=\"" << x_at(i) << "\" y=\"" << H - bottom + 16
         << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" << series[i].split
         << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

void EvalReport::write(const std::string& dir, const std::string& stem) const {
  fs::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw ProtocolError("cannot write '" + (fs::path(dir) / name).string() + "'");
    out << text;
  };
  put(stem + ".csv", csv());
  for (const auto& m : metrics_for(kind)) put(stem + "_" + m + ".svg", svg(m));
  nlohmann::json meta = metadata;
  meta["warnings"] = warnings;
  meta["label_kind"] = data::to_string(kind);
  put(stem + "_meta.json", meta.dump(2) + "\n");
}

namespace {

struct Scores {
  std::vector<double> labels;
  num::Tensor logits;
};

Scores predict(objectives::Model& model, const data::Dataset& ds) {
  if (!ds.has_labels()) throw ProtocolError("evaluation data has no labels");
  std::vector<std::size_t> rows(ds.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  Scores s;
  s.labels.assign(ds.labels().begin(), ds.labels().end());
  s.logits = objectives::predict_logits(model, ds, rows);
  return s;
}

MetricRow metrics_of(const Scores& s, data::LabelKind kind, std::size_t classes, const std::string& split) {
  MetricRow r;
  r.split = split;
  r.rows = s.labels.size();
  if (kind == data::LabelKind::regression) {
    r.rmse = rmse(s.logits.values, s.labels);
    return r;
  }
  if (kind == data::LabelKind::binary) {
    r.auc = roc_auc(s.logits.values, s.labels);
    r.ks = ks_stat(s.logits.values, s.labels);
    return r;
  }
  const std::size_t n = s.labels.size();
  double auc = 0.0, ks = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> score(n), target(n);
    for (std::size_t i = 0; i < n; ++i) {
      double mx = s.logits.values[i * classes];
      for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, s.logits.values[i * classes + k]);
      double z = 0.0;
      for (std::size_t k = 0; k < classes; ++k) z += std::exp(s.logits.values[i * classes + k] - mx);
      score[i] = std::exp(s.logits.values[i * classes + c] - mx) / z;
      target[i] = s.labels[i] == static_cast<double>(c) ? 1.0 : 0.0;
    }
    const auto pos = std::count(target.begin(), target.end(), 1.0);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(n)) continue;
    auc += roc_auc(score, target);
    ks += ks_stat(score, target);
    ++used;
  }
  if (used == 0) throw UndefinedMetricError("no class has both positives and negatives in split '" + split + "'");
  r.auc = auc / static_cast<double>(used);
  r.ks = ks / static_cast<double>(used);
  return r;
}

}  // namespace

MetricRow score_dataset(objectives::Model& model, const data::Dataset& ds, const std::string& split) {
  return metrics_of(predict(model, ds), model.spec.schema.label->kind, model.spec.outputs(), split);
}

EvalReport monthly_oot_report(objectives::Model& model, const data::Dataset& train,
                              std::span<const data::MonthBucket> months) {
  EvalReport report;
  report.kind = model.spec.schema.label->kind;
  const std::size_t classes = model.spec.outputs();
  report.rows.push_back(score_dataset(model, train, "train"));

  Scores pooled;
  std::vector<double> pooled_logits;
  std::vector<MetricRow> monthly;
  for (const auto& bucket : months) {
    if (bucket.rows.empty()) {
      report.warnings.push_back("month " + bucket.month + " is empty; skipped");
      continue;
    }
    const Scores s = predict(model, bucket.rows);
    pooled.labels.insert(pooled.labels.end(), s.labels.begin(), s.labels.end());
    pooled_logits.insert(pooled_logits.end(), s.logits.values.begin(), s.logits.values.end());
    try {
      monthly.push_back(metrics_of(s, report.kind, classes, bucket.month));
    } catch (const UndefinedMetricError& e) {
      report.warnings.push_back("month " + bucket.month + ": " + e.what() + "; skipped");
    }
  }
  if (monthly.empty()) throw ProtocolError("no evaluable test month");
  report.rows.insert(report.rows.end(), monthly.begin(), monthly.end());

  MetricRow mean;
  mean.split = "monthly_mean";
  double auc = 0.0, ks = 0.0, err = 0.0;
  for (const auto& m : monthly) {
    mean.rows += m.rows;
    auc += m.auc;
    ks += m.ks;
    err += m.rmse;
  }
  const double k = static_cast<double>(monthly.size());
  mean.auc = auc / k;
  mean.ks = ks / k;
  mean.rmse = err / k;
  report.rows.push_back(mean);

  pooled.logits = num::Tensor({pooled.labels.size(), classes}, std::move(pooled_logits));
  report.rows.push_back(metrics_of(pooled, report.kind, classes, "pooled"));

  const MetricRow& tr = report.rows.front();
  MetricRow gap;
  gap.split = "gap";
  gap.auc = tr.auc - mean.auc;
  gap.ks = tr.ks - mean.ks;
  gap.rmse = tr.rmse - mean.rmse;
  report.rows.push_back(gap);
  return report;
}

}  // namespace masktab::eval
