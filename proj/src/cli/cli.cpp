#include "masktab/cli/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "masktab/data/csv.hpp"
#include "masktab/data/stats.hpp"
#include "masktab/errors.hpp"
#include "masktab/eval/experiment.hpp"

namespace masktab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string command;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string checkpoint;
  std::string teacher_cache;
  bool dry_run = false;
};

void log(const std::string& msg) { std::cerr << "masktab: " << msg << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ProtocolError("cannot write '" + path.string() + "'");
  out << text;
}

std::string num(double v) { return data::format_double(v); }

struct LoadedData {
  data::Dataset labeled;
  data::Dataset unlabeled;
};

LoadedData load_data(const CliConfig& cfg) {
  if (cfg.data.synthetic()) {
    auto s = data::synth_generate(cfg.generator, cfg.seed);
    return {std::move(s.labeled), std::move(s.unlabeled)};
  }
  const auto schema = data::FeatureSchema::load(cfg.data.schema);
  LoadedData d{data::load_csv(cfg.data.labeled, schema), data::Dataset(schema)};
  if (!cfg.data.unlabeled.empty()) d.unlabeled = data::load_csv(cfg.data.unlabeled, schema).without_labels();
  return d;
}

eval::ExperimentData experiment(const CliConfig& cfg) {
  const auto d = load_data(cfg);
  return eval::make_experiment(d.labeled, d.unlabeled, cfg.data.boundaries);
}

/// Column indices in `ds` of the features a model was trained on.
std::vector<std::size_t> features_by_name(const data::FeatureSchema& ds, const data::FeatureSchema& model) {
  std::vector<std::size_t> idx;
  for (const auto& f : model.features) {
    const auto i = ds.index_of(f.name);
    if (!i) throw ProtocolError("checkpoint feature '" + f.name + "' is not in the data");
    idx.push_back(*i);
  }
  return idx;
}

void require_checkpoint(const std::string& dir, const std::string& command) {
  if (dir.empty()) throw ProtocolError(command + " requires --checkpoint DIR");
  if (!fs::exists(fs::path(dir) / "manifest.json")) {
    throw ProtocolError("checkpoint not found: '" + dir + "' (no manifest.json)");
  }
}

void write_run(const fs::path& out, const train::StageResult& r) {
  r.checkpoint.save((out / "checkpoint").string());
  train::write_metrics_csv((out / "metrics.csv").string(), r.metrics);
}

void report_summary(const eval::EvalReport& rep) {
  for (const auto& w : rep.warnings) log("warning: " + w);
  const auto& mean = rep.row("monthly_mean");
  if (rep.kind == data::LabelKind::regression) {
    log("monthly mean rmse " + num(mean.rmse));
  } else {
    log("monthly mean auc " + num(mean.auc) + ", ks " + num(mean.ks) + ", gap " + num(rep.row("gap").auc));
  }
}

// ---------------------------------------------------------------- commands

void cmd_synth(const CliConfig& cfg, const fs::path& out) {
  if (!cfg.data.synthetic()) throw ProtocolError("synth: the config names CSV inputs; remove data.labeled");
  const auto s = data::synth_generate(cfg.generator, cfg.seed);
  data::write_csv((out / "labeled.csv").string(), s.labeled);
  data::write_csv((out / "unlabeled.csv").string(), s.unlabeled);
  s.labeled.schema.save((out / "schema.json").string());
  log("wrote " + std::to_string(s.labeled.rows()) + " labeled and " + std::to_string(s.unlabeled.rows()) +
      " unlabeled rows");
}

void cmd_stats(const CliConfig& cfg, const fs::path& out) {
  const auto ex = experiment(cfg);
  const auto ms = data::missing_rates(ex.train);
  const auto ranking = data::rank_features(ex.train, cfg.iv_bins);
  std::ostringstream f;
  f << "feature,kind,missing_rate,iv,iv_rank\n";
  for (std::size_t k = 0; k < ex.train.features(); ++k) {
    const auto& spec = ex.train.schema.features[k];
    f << spec.name << ',' << data::to_string(spec.kind) << ',' << num(ms.feature_rates[k]) << ','
      << num(ranking.scores[k]) << ',' << ranking.rank[k] << '\n';
  }
  write_text(out / "feature_stats.csv", f.str());

  const auto hist = data::instance_missing_histogram(ms, 10);
  std::ostringstream h;
  h << "bin_lo,bin_hi,share\n";
  for (std::size_t b = 0; b < hist.size(); ++b) {
    h << num(static_cast<double>(b) / hist.size()) << ',' << num(static_cast<double>(b + 1) / hist.size()) << ','
      << num(hist[b]) << '\n';
  }
  write_text(out / "instance_missing.csv", h.str());
  log("train rows " + std::to_string(ex.train.rows()) + ", max row missing ratio " + num(ms.eta_max));
}

void cmd_iv_rank(const CliConfig& cfg, const fs::path& out) {
  const auto ex = experiment(cfg);
  const auto r = data::rank_features(ex.train, cfg.iv_bins);
  std::ostringstream s;
  s << "rank,feature,iv\n";
  for (std::size_t i = 0; i < r.order.size(); ++i) {
    s << i + 1 << ',' << r.names[r.order[i]] << ',' << num(r.scores[r.order[i]]) << '\n';
  }
  write_text(out / "iv_rank.csv", s.str());
}

void cmd_pretrain(const CliConfig& cfg, const Options& opt, const fs::path& out) {
  const auto ex = experiment(cfg);
  std::optional<train::Checkpoint> init;
  if (!opt.checkpoint.empty()) {
    require_checkpoint(opt.checkpoint, "pretrain");
    init = train::Checkpoint::load(opt.checkpoint);
  }
  const auto ex2 = init ? ex.select_features(features_by_name(ex.train.schema, init->spec.schema)) : ex;
  const auto r = train::run_stage(cfg.run, {&ex2.train, &ex2.unlabeled, nullptr}, init ? &*init : nullptr);
  write_run(out, r);
  auto model = r.checkpoint.model();
  const auto rep = eval::monthly_oot_report(model, ex2.train, ex2.test_months);
  rep.write(out.string(), "report");
  report_summary(rep);
}

void cmd_finetune(const CliConfig& cfg, const Options& opt, const fs::path& out) {
  require_checkpoint(opt.checkpoint, "finetune");
  const auto init = train::Checkpoint::load(opt.checkpoint);
  const auto all = experiment(cfg);
  const auto ex = all.select_features(features_by_name(all.train.schema, init.spec.schema));
  const auto r = train::run_stage(cfg.finetune, {&ex.train, nullptr, nullptr}, &init);
  write_run(out, r);
  auto model = r.checkpoint.model();
  const auto rep = eval::monthly_oot_report(model, ex.train, ex.test_months);
  rep.write(out.string(), "report");
  report_summary(rep);
}

void cmd_distill(const CliConfig& cfg, const Options& opt, const fs::path& out) {
  require_checkpoint(opt.checkpoint, "distill");
  const auto teacher_ckpt = train::Checkpoint::load(opt.checkpoint);
  auto teacher = teacher_ckpt.model();
  const auto all = experiment(cfg);
  const auto full = all.select_features(features_by_name(all.train.schema, teacher_ckpt.spec.schema));
  const auto ranking = data::rank_features(full.train, cfg.iv_bins);
  const auto student = data::feature_groups(ranking, cfg.student_top_k, 1);
  const std::string cache = opt.teacher_cache.empty() ? (out / "teacher_cache").string() : opt.teacher_cache;
  const auto run = eval::distill_student(cfg.distill, teacher, full, student, cache);
  write_run(out, run.result);
  run.report.write(out.string(), "report");

  std::vector<std::string> names;
  for (auto i : student) names.push_back(full.train.schema.features[i].name);
  const json a{{"student_features", names},
               {"teacher_rows", run.cache.rows()},
               {"teacher_width", run.cache.d_t},
               {"teacher_digest", run.cache.teacher_digest},
               {"align_init", run.align_init},
               {"align_final", run.align_final}};
  write_text(out / "alignment.json", a.dump(2) + "\n");
  log("alignment loss " + num(run.align_init) + " -> " + num(run.align_final));
  report_summary(run.report);
}

void cmd_eval(const CliConfig& cfg, const Options& opt, const fs::path& out) {
  require_checkpoint(opt.checkpoint, "eval");
  const auto ckpt = train::Checkpoint::load(opt.checkpoint);
  auto model = ckpt.model();
  const auto all = experiment(cfg);
  const auto ex = all.select_features(features_by_name(all.train.schema, ckpt.spec.schema));
  const auto rep = eval::monthly_oot_report(model, ex.train, ex.test_months);
  rep.write(out.string(), "report");
  report_summary(rep);
}

std::vector<eval::Variant> variants_of(const CliConfig& cfg) {
  if (cfg.variants.empty()) return eval::standard_ladder();
  std::vector<eval::Variant> v;
  for (const auto& n : cfg.variants) v.push_back(eval::find_variant(n));
  return v;
}

void cmd_ablate(const CliConfig& cfg, const fs::path& out) {
  const auto ex = experiment(cfg);
  const auto ladder = variants_of(cfg);
  const auto table = eval::ablation_run(cfg.run, ex, ladder, cfg.ablate_finetune_steps);
  write_text(out / "ablation.csv", table.csv());
  for (const auto& r : table.rows) log(r.name + ": auc " + num(r.auc) + ", ks " + num(r.ks));
}

void cmd_sweep(const CliConfig& cfg, const fs::path& out) {
  const auto ex = experiment(cfg);
  const auto axis = eval::parse_sweep_axis(cfg.sweep_axis);
  const auto grid = cfg.sweep_grid.empty() ? eval::default_grid(axis, ex) : cfg.sweep_grid;
  const auto table = eval::scaling_sweep(axis, grid, cfg.run, ex);
  write_text(out / "sweep.csv", table.csv());
  for (const auto& r : table.rows) log(cfg.sweep_axis + " " + r.name + ": auc " + num(r.auc));
}

// ------------------------------------------------------------------- plan

json plan_of(const Options& opt, const CliConfig& cfg) {
  const fs::path out(opt.out);
  std::vector<std::string> reads, writes;
  if (cfg.data.synthetic()) {
    reads.push_back("generator (seed " + std::to_string(cfg.seed) + ")");
  } else {
    reads.push_back(cfg.data.schema);
    reads.push_back(cfg.data.labeled);
    if (!cfg.data.unlabeled.empty()) reads.push_back(cfg.data.unlabeled);
  }
  if (!opt.checkpoint.empty()) reads.push_back(opt.checkpoint);
  auto w = [&](const std::string& f) { writes.push_back((out / f).string()); };
  w("resolved_config.json");
  const auto& c = opt.command;
  if (c == "synth") {
    reads = {"generator (seed " + std::to_string(cfg.seed) + ")"};
    w("labeled.csv");
    w("unlabeled.csv");
    w("schema.json");
  } else if (c == "stats") {
    w("feature_stats.csv");
    w("instance_missing.csv");
  } else if (c == "iv-rank") {
    w("iv_rank.csv");
  } else if (c == "pretrain" || c == "finetune" || c == "distill") {
    w("checkpoint/");
    w("metrics.csv");
    w("report.csv");
    if (c == "distill") {
      writes.push_back(opt.teacher_cache.empty() ? (out / "teacher_cache/").string() : opt.teacher_cache);
      w("alignment.json");
    }
  } else if (c == "eval") {
    w("report.csv");
  } else if (c == "ablate") {
    w("ablation.csv");
  } else if (c == "sweep") {
    w("sweep.csv");
  }
  json p{{"command", c}, {"reads", reads}, {"writes", writes}};
  if (c == "pretrain" || c == "ablate" || c == "sweep") p["steps"] = cfg.run.total_steps;
  if (c == "finetune") p["steps"] = cfg.finetune.total_steps;
  if (c == "distill") p["steps"] = cfg.distill.total_steps;
  if (c == "ablate") {
    std::vector<std::string> names;
    for (const auto& v : variants_of(cfg)) names.push_back(v.name);
    p["variants"] = names;
  }
  return p;
}

std::size_t threads_from_env() {
  const char* env = std::getenv("MASKTAB_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 256) throw ProtocolError(std::string("MASKTAB_THREADS must be 1..256, got '") + env + "'");
  return static_cast<std::size_t>(n);
}

int run(const Options& opt) {
  const auto cfg = opt.config.empty() ? CliConfig::from_json(json::object(), opt.seed) : CliConfig::load(opt.config, opt.seed);
  const auto threads = threads_from_env();
  const auto& c = opt.command;
  if ((c == "finetune" || c == "distill" || c == "eval") && !opt.dry_run) require_checkpoint(opt.checkpoint, c);
  if (opt.dry_run) {
    json p = plan_of(opt, cfg);
    p["threads"] = threads;
    p["config"] = cfg.to_json();
    std::cerr << p.dump(2) << '\n';
    return 0;
  }
  objectives::set_inference_threads(threads);
  const fs::path out(opt.out);
  fs::create_directories(out);
  write_text(out / "resolved_config.json", cfg.to_json().dump(2) + "\n");

  if (c == "synth") cmd_synth(cfg, out);
  else if (c == "stats") cmd_stats(cfg, out);
  else if (c == "iv-rank") cmd_iv_rank(cfg, out);
  else if (c == "pretrain") cmd_pretrain(cfg, opt, out);
  else if (c == "finetune") cmd_finetune(cfg, opt, out);
  else if (c == "distill") cmd_distill(cfg, opt, out);
  else if (c == "eval") cmd_eval(cfg, opt, out);
  else if (c == "ablate") cmd_ablate(cfg, out);
  else if (c == "sweep") cmd_sweep(cfg, out);
  log(c + " done, outputs in " + out.string());
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Masked tabular pretraining for credit risk", "masktab"};
  app.require_subcommand(1, 1);
  Options opt;
  std::uint64_t seed = 0;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "generate a synthetic dataset (labeled.csv, unlabeled.csv, schema.json)"},
      {"stats", "missingness and information value per feature"},
      {"iv-rank", "features ranked by information value"},
      {"pretrain", "hybrid pretraining on labeled and unlabeled rows"},
      {"finetune", "supervised finetuning of --checkpoint"},
      {"distill", "cache the --checkpoint teacher and train a top-IV student"},
      {"eval", "monthly out-of-time report for --checkpoint"},
      {"ablate", "one run per ablation variant"},
      {"sweep", "one run per point of a scaling axis"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "global seed (overrides the config)");
    sub->add_option("--out", opt.out, "output directory")->capture_default_str();
    sub->add_option("--checkpoint", opt.checkpoint, "checkpoint directory");
    sub->add_option("--teacher-cache", opt.teacher_cache, "teacher embedding cache directory");
    sub->add_flag("--dry-run", opt.dry_run, "validate and print the plan without touching data");
    sub->callback([&opt, sub, &seed] {
      opt.command = sub->get_name();
      if (sub->count("--seed") > 0) opt.seed = seed;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cerr << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cerr << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "masktab: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    return run(opt);
  } catch (const NumericError& e) {
    log("numeric error: " + std::string(e.what()));
    return 2;
  } catch (const Error& e) {
    log("error: " + std::string(e.what()));
    return 1;
  } catch (const std::exception& e) {
    log("error: " + std::string(e.what()));
    return 1;
  }
}

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"masktab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace masktab::cli
