#include <fstream>

#include "masktab/cli/cli.hpp"
#include "masktab/errors.hpp"
#include "masktab/eval/experiment.hpp"
#include "masktab/io/json_reader.hpp"

namespace masktab::cli {

using nlohmann::json;

json generator_to_json(const data::GeneratorConfig& g) {
  return json{{"d_num", g.d_num},
              {"d_cat", g.d_cat},
              {"n_labeled", g.n_labeled},
              {"n_unlabeled", g.n_unlabeled},
              {"kappa", g.kappa},
              {"drift", g.drift},
              {"months", g.months},
              {"start_year", g.start_year},
              {"start_month", g.start_month},
              {"unlabeled_months", g.unlabeled_months},
              {"latent_dim", g.latent_dim},
              {"base_missing", g.base_missing},
              {"mnar_fraction", g.mnar_fraction},
              {"mnar_scale", g.mnar_scale},
              {"noise", g.noise},
              {"cat_vocab", g.cat_vocab},
              {"rectified_fraction", g.rectified_fraction},
              {"label_scale", g.label_scale}};
}

namespace {

data::GeneratorConfig generator_from_json(io::ObjectReader r) {
  data::GeneratorConfig g;
  r.get("d_num", g.d_num);
  r.get("d_cat", g.d_cat);
  r.get("n_labeled", g.n_labeled);
  r.get("n_unlabeled", g.n_unlabeled);
  r.get("kappa", g.kappa);
  r.get("drift", g.drift);
  r.get("months", g.months);
  r.get("start_year", g.start_year);
  r.get("start_month", g.start_month);
  r.get("unlabeled_months", g.unlabeled_months);
  r.get("latent_dim", g.latent_dim);
  r.get("base_missing", g.base_missing);
  r.get("mnar_fraction", g.mnar_fraction);
  r.get("mnar_scale", g.mnar_scale);
  r.get("noise", g.noise);
  r.get("cat_vocab", g.cat_vocab);
  r.get("rectified_fraction", g.rectified_fraction);
  r.get("label_scale", g.label_scale);
  r.finish();
  return g;
}

std::vector<data::Date> parse_dates(const std::vector<std::string>& text) {
  std::vector<data::Date> out;
  for (const auto& t : text) {
    try {
      out.push_back(data::Date::parse(t));
    } catch (const IngestionError& e) {
      throw ProtocolError(std::string("data.boundaries: ") + e.what());
    }
  }
  return out;
}

}  // namespace

CliConfig CliConfig::from_json(const json& j, std::optional<std::uint64_t> seed) {
  CliConfig c;
  io::ObjectReader r(j, "config");
  r.get("seed", c.seed);
  if (seed) c.seed = *seed;
  if (r.has("generator")) c.generator = generator_from_json(r.child("generator"));
  if (r.has("data")) {
    auto d = r.child("data");
    d.get("schema", c.data.schema);
    d.get("labeled", c.data.labeled);
    d.get("unlabeled", c.data.unlabeled);
    if (d.has("boundaries")) {
      std::vector<std::string> b;
      d.get("boundaries", b);
      c.data.boundaries = parse_dates(b);
    }
    d.finish();
  }
  if (r.has("run")) c.run = train::RunConfig::from_json(r.raw("run"), c.run, "config.run");
  c.run.seed = c.seed;
  c.run.stage = train::Stage::hybrid_pretrain;

  c.finetune = c.run;
  c.finetune.stage = train::Stage::finetune;
  if (r.has("finetune")) c.finetune = train::RunConfig::from_json(r.raw("finetune"), c.finetune, "config.finetune");
  c.finetune.stage = train::Stage::finetune;
  c.finetune.seed = c.seed;

  c.distill = c.run;
  c.distill.stage = train::Stage::distill;
  if (r.has("distill")) c.distill = train::RunConfig::from_json(r.raw("distill"), c.distill, "config.distill");
  c.distill.stage = train::Stage::distill;
  c.distill.seed = c.seed;

  if (r.has("student")) {
    auto s = r.child("student");
    s.get("top_k", c.student_top_k);
    s.finish();
  }
  if (r.has("ablate")) {
    auto a = r.child("ablate");
    a.get("variants", c.variants);
    a.get("finetune_steps", c.ablate_finetune_steps);
    a.finish();
  }
  if (r.has("sweep")) {
    auto s = r.child("sweep");
    s.get("axis", c.sweep_axis);
    s.get("grid", c.sweep_grid);
    s.finish();
  }
  if (r.has("stats")) {
    auto s = r.child("stats");
    s.get("iv_bins", c.iv_bins);
    s.finish();
  }
  r.finish();
  c.validate();
  return c;
}

CliConfig CliConfig::load(const std::string& path, std::optional<std::uint64_t> seed) {
  std::ifstream in(path);
  if (!in) throw ProtocolError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ProtocolError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j, seed);
}

json CliConfig::to_json() const {
  std::vector<std::string> bounds;
  for (const auto& b : data.boundaries) bounds.push_back(b.str());
  auto strip = [](json j) {
    j.erase("stage");
    j.erase("seed");
    return j;
  };
  return json{{"seed", seed},
              {"generator", generator_to_json(generator)},
              {"data",
               {{"schema", data.schema},
                {"labeled", data.labeled},
                {"unlabeled", data.unlabeled},
                {"boundaries", bounds}}},
              {"run", strip(run.to_json())},
              {"finetune", strip(finetune.to_json())},
              {"distill", strip(distill.to_json())},
              {"student", {{"top_k", student_top_k}}},
              {"ablate", {{"variants", variants}, {"finetune_steps", ablate_finetune_steps}}},
              {"sweep", {{"axis", sweep_axis}, {"grid", sweep_grid}}},
              {"stats", {{"iv_bins", iv_bins}}}};
}

void CliConfig::validate() const {
  if (data.synthetic()) {
    generator.validate();
  } else if (data.schema.empty()) {
    throw ProtocolError("config.data: a schema file is required with CSV inputs");
  }
  if (data.boundaries.empty()) throw ProtocolError("config.data.boundaries: at least one date is required");
  for (std::size_t i = 1; i < data.boundaries.size(); ++i) {
    if (!(data.boundaries[i - 1] < data.boundaries[i])) {
      throw ProtocolError("config.data.boundaries must be strictly increasing");
    }
  }
  run.validate();
  finetune.validate();
  distill.validate();
  if (student_top_k == 0) throw ProtocolError("config.student.top_k must be positive");
  if (iv_bins < 2) throw ProtocolError("config.stats.iv_bins must be at least 2");
  for (const auto& v : variants) eval::find_variant(v);
  eval::parse_sweep_axis(sweep_axis);
}

}  // namespace masktab::cli
