#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "masktab/data/csv.hpp"
#include "masktab/data/dataset.hpp"
#include "masktab/data/split.hpp"
#include "masktab/data/stats.hpp"
#include "masktab/data/synth.hpp"
#include "masktab/errors.hpp"
#include "masktab/random.hpp"

using namespace masktab;
using namespace masktab::data;

namespace {

FeatureSchema ab_schema() {
  FeatureSchema s;
  s.features.push_back({"a", FeatureKind::numerical, {}});
  s.features.push_back({"b", FeatureKind::categorical, {"x", "z"}});
  s.label = LabelSpec{"y", LabelKind::binary, 0};
  return s;
}

FeatureSchema numeric_schema(std::size_t d) {
  FeatureSchema s;
  for (std::size_t k = 0; k < d; ++k) s.features.push_back({"f" + std::to_string(k), FeatureKind::numerical, {}});
  s.label = LabelSpec{"y", LabelKind::binary, 0};
  return s;
}

// Binary-score AUC: P(pos > neg) + 0.5 P(tie).
double indicator_auc(const std::vector<int>& score, const std::vector<double>& y) {
  double pos1 = 0, pos0 = 0, neg1 = 0, neg0 = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 1.0) {
      (score[i] ? pos1 : pos0) += 1;
    } else {
      (score[i] ? neg1 : neg0) += 1;
    }
  }
  const double pos = pos1 + pos0, neg = neg1 + neg0;
  return (pos1 * neg0 + 0.5 * (pos1 * neg1 + pos0 * neg0)) / (pos * neg);
}

double mutual_information_bits(const std::vector<int>& a, const std::vector<double>& y) {
  double joint[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < a.size(); ++i) joint[a[i]][y[i] == 1.0 ? 1 : 0] += 1;
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double pij = joint[i][j] / n;
      const double pi = (joint[i][0] + joint[i][1]) / n;
      const double pj = (joint[0][j] + joint[1][j]) / n;
      if (pij > 0) mi += pij * std::log2(pij / (pi * pj));
    }
  }
  return mi;
}

}  // namespace

TEST(Csv, EmptyCellIsMissing) {
  const auto ds = parse_csv("a,b,y\n1.5,,1\n", ab_schema());
  ASSERT_EQ(ds.rows(), 1u);
  EXPECT_FALSE(ds.is_missing(0, 0));
  EXPECT_EQ(ds.value(0, 0), 1.5);
  EXPECT_TRUE(ds.is_missing(0, 1));
  EXPECT_EQ(ds.label(0), 1.0);
}

TEST(Csv, OutOfVocabularyNamesRowAndColumn) {
  try {
    parse_csv("a,b,y\n1.5,q,1\n", ab_schema());
    FAIL() << "expected an ingestion error";
  } catch (const IngestionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column b"), std::string::npos) << msg;
  }
}

TEST(Csv, UnknownColumnAndBadNumber) {
  EXPECT_THROW(parse_csv("a,b,y,zz\n1,x,0,2\n", ab_schema()), IngestionError);
  EXPECT_THROW(parse_csv("a,b,y\nabc,x,0\n", ab_schema()), IngestionError);
}

TEST(Csv, RowIdsAndColumnOrder) {
  const auto ds = parse_csv("y,b,a\n0,x,1\n1,z,2\n0,,3\n", ab_schema());
  ASSERT_EQ(ds.rows(), 3u);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(ds.row_id(r), static_cast<std::int64_t>(r));
  EXPECT_EQ(ds.value(1, 0), 2.0);
  EXPECT_EQ(ds.value(1, 1), 1.0);
}

TEST(Csv, RoundTripThroughFile) {
  GeneratorConfig cfg;
  cfg.n_labeled = 300;
  cfg.n_unlabeled = 50;
  const auto gen = synth_generate(cfg, 9);
  const auto dir = std::filesystem::temp_directory_path() / "masktab_csv_roundtrip";
  std::filesystem::create_directories(dir);
  for (const Dataset* ds : {&gen.labeled, &gen.unlabeled}) {
    const auto path = (dir / "rows.csv").string();
    write_csv(path, *ds);
    FeatureSchema schema = ds->schema;
    if (!ds->has_labels()) schema.label.reset();
    const Dataset back = load_csv(path, schema);
    EXPECT_TRUE(back == *ds);
  }
  std::filesystem::remove_all(dir);
}

TEST(Schema, JsonRoundTripAndValidation) {
  FeatureSchema s = ab_schema();
  s.timestamp = "date";
  const auto back = FeatureSchema::from_json_text(s.to_json_text());
  EXPECT_EQ(back.to_json_text(), s.to_json_text());
  EXPECT_THROW(FeatureSchema::from_json_text(R"({"features":[{"name":"a","kind":"numerical"},{"name":"a","kind":"numerical"}]})"),
               IngestionError);
  EXPECT_THROW(FeatureSchema::from_json_text(R"({"features":[], "extra": 1})"), IngestionError);
}

TEST(MissingRates, HandCountedExamples) {
  Dataset ds(numeric_schema(4));
  using C = std::optional<double>;
  ds.append(std::vector<C>{1.0, C{}, C{}, C{}}, 0.0, std::nullopt, 0);
  ds.append(std::vector<C>{1.0, 2.0, C{}, 4.0}, 1.0, std::nullopt, 1);
  ds.append(std::vector<C>{1.0, 2.0, 3.0, 4.0}, 0.0, std::nullopt, 2);
  ds.append(std::vector<C>{1.0, 2.0, 3.0, 4.0}, 1.0, std::nullopt, 3);
  const auto st = missing_rates(ds);
  EXPECT_EQ(st.feature_rates[0], 0.0);
  EXPECT_EQ(st.feature_rates[2], 0.5);
  EXPECT_EQ(st.instance_ratios[0], 0.75);
  EXPECT_EQ(st.eta_max, 0.75);
  EXPECT_THROW(missing_rates(Dataset(numeric_schema(2))), ProtocolError);
}

TEST(MissingRates, FullyObservedIsZero) {
  Dataset ds(numeric_schema(3));
  for (int r = 0; r < 5; ++r) ds.append(std::vector<std::optional<double>>{1.0, 2.0, 3.0}, 0.0, std::nullopt, r);
  const auto st = missing_rates(ds);
  for (const double e : st.feature_rates) EXPECT_EQ(e, 0.0);
  EXPECT_EQ(st.eta_max, 0.0);
  const auto hist = instance_missing_histogram(st, 10);
  EXPECT_EQ(hist[0], 1.0);
}

TEST(InformationValue, IndependentFeatureIsSmall) {
  Rng rng(101);
  Dataset ds(numeric_schema(1));
  for (int r = 0; r < 10000; ++r) {
    ds.append(std::vector<std::optional<double>>{rng.normal()}, rng.bernoulli(0.5) ? 1.0 : 0.0, std::nullopt, r);
  }
  EXPECT_LT(information_value(ds, 0), 0.02);
}

TEST(InformationValue, FeatureEqualToLabelMatchesHandTable) {
  FeatureSchema s;
  s.features.push_back({"f", FeatureKind::categorical, {"good", "bad"}});
  s.label = LabelSpec{"y", LabelKind::binary, 0};
  Dataset ds(s);
  for (int r = 0; r < 1000; ++r) {
    const double y = r < 300 ? 1.0 : 0.0;
    ds.append(std::vector<std::optional<double>>{y}, y, std::nullopt, r);
  }
  // Smoothed 2x2 table: good = {700.5, 0.5} of 701, bad = {0.5, 300.5} of 301.
  const double g0 = 700.5 / 701, g1 = 0.5 / 701, b0 = 0.5 / 301, b1 = 300.5 / 301;
  const double expected = (g0 - b0) * std::log(g0 / b0) + (g1 - b1) * std::log(g1 / b1);
  EXPECT_NEAR(information_value(ds, 0), expected, 1e-12);
}

TEST(InformationValue, AllMissingIsZeroAndSingleClassThrows) {
  Dataset ds(numeric_schema(1));
  for (int r = 0; r < 20; ++r) ds.append(std::vector<std::optional<double>>{std::nullopt}, r % 2, std::nullopt, r);
  EXPECT_EQ(information_value(ds, 0), 0.0);
  Dataset one(numeric_schema(1));
  for (int r = 0; r < 5; ++r) one.append(std::vector<std::optional<double>>{1.0 * r}, 1.0, std::nullopt, r);
  EXPECT_THROW(information_value(one, 0), ProtocolError);
}

TEST(InformationValue, InvariantUnderMonotoneTransform) {
  Rng rng(5);
  Dataset a(numeric_schema(1)), b(numeric_schema(1));
  for (int r = 0; r < 2000; ++r) {
    const double x = rng.normal();
    const double y = rng.bernoulli(1.0 / (1.0 + std::exp(-2 * x))) ? 1.0 : 0.0;
    std::optional<double> cell = x, mapped = std::exp(3 * x) + 1;
    if (rng.bernoulli(0.1)) cell = mapped = std::nullopt;
    a.append(std::vector<std::optional<double>>{cell}, y, std::nullopt, r);
    b.append(std::vector<std::optional<double>>{mapped}, y, std::nullopt, r);
  }
  EXPECT_EQ(information_value(a, 0), information_value(b, 0));
  EXPECT_GT(information_value(a, 0), 0.1);
}

TEST(FeatureGroups, TopPrefixesAndTruncation) {
  std::vector<std::string> names;
  std::vector<double> scores;
  for (int k = 0; k < 10; ++k) {
    names.push_back("f" + std::to_string(k));
    scores.push_back(k * 0.1);
  }
  const auto ranking = make_ranking(names, scores);
  const auto g = feature_groups(ranking, 2, 3);
  ASSERT_EQ(g.size(), 6u);
  EXPECT_EQ(g[0], 9u);
  EXPECT_EQ(g[5], 4u);
  EXPECT_EQ(feature_groups(ranking, 4, 5).size(), 10u);
  EXPECT_THROW(feature_groups(ranking, 2, 0), ProtocolError);
}

TEST(FeatureGroups, TiesBrokenByName) {
  const auto ranking = make_ranking({"zeta", "alpha", "mid"}, {0.3, 0.3, 0.5});
  EXPECT_EQ(ranking.order, (std::vector<std::size_t>{2, 1, 0}));
  EXPECT_EQ(ranking.rank, (std::vector<std::size_t>{3, 2, 1}));
}

namespace {

Dataset dated(const std::vector<std::string>& dates) {
  FeatureSchema s = numeric_schema(1);
  s.timestamp = "date";
  Dataset ds(s);
  for (std::size_t i = 0; i < dates.size(); ++i) {
    ds.append(std::vector<std::optional<double>>{1.0}, static_cast<double>(i % 2), Date::parse(dates[i]),
              static_cast<std::int64_t>(i));
  }
  return ds;
}

}  // namespace

TEST(TemporalSplit, QuarterBoundaries) {
  std::vector<std::string> dates;
  for (int m = 1; m <= 12; ++m) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "2024-%02d-15", m);
    dates.push_back(buf);
  }
  dates.push_back("2024-07-01");
  dates.push_back("2024-09-30");
  const auto sp = temporal_split(dated(dates), {Date::parse("2024-07-01"), Date::parse("2024-10-01")});
  EXPECT_EQ(sp.train.rows(), 6u);
  EXPECT_EQ(sp.val.rows(), 5u);
  EXPECT_EQ(sp.test.rows(), 3u);
  ASSERT_EQ(sp.test_months.size(), 3u);
  EXPECT_EQ(sp.test_months[0].month, "2024-10");
  EXPECT_EQ(sp.test_months[2].month, "2024-12");
  EXPECT_TRUE(sp.warnings.empty());
}

TEST(TemporalSplit, EverythingBeforeFirstBoundaryWarns) {
  const auto sp = temporal_split(dated({"2024-01-02", "2024-02-03"}),
                                 {Date::parse("2024-07-01"), Date::parse("2024-10-01")});
  EXPECT_EQ(sp.train.rows(), 2u);
  EXPECT_TRUE(sp.val.empty());
  EXPECT_TRUE(sp.test.empty());
  EXPECT_FALSE(sp.warnings.empty());
}

TEST(TemporalSplit, TwoTestMonths) {
  const auto sp = temporal_split(dated({"2024-01-02", "2024-10-03", "2024-12-30", "2024-10-31"}),
                                 {Date::parse("2024-07-01"), Date::parse("2024-10-01")});
  ASSERT_EQ(sp.test_months.size(), 2u);
  EXPECT_EQ(sp.test_months[0].rows.rows(), 2u);
  EXPECT_EQ(sp.test_months[1].month, "2024-12");
}

TEST(TemporalSplit, ErrorsAndPartition) {
  Dataset no_dates(numeric_schema(1));
  no_dates.append(std::vector<std::optional<double>>{1.0}, 0.0, std::nullopt, 0);
  EXPECT_THROW(temporal_split(no_dates, {Date::parse("2024-01-01")}), IngestionError);
  EXPECT_THROW(temporal_split(dated({"2024-01-01"}), {Date::parse("2024-05-01"), Date::parse("2024-05-01")}),
               ProtocolError);

  GeneratorConfig cfg;
  cfg.n_labeled = 1000;
  cfg.n_unlabeled = 0;
  const auto gen = synth_generate(cfg, 3);
  const auto sp = temporal_split(gen.labeled, {Date::parse("2024-07-01"), Date::parse("2024-10-01")});
  std::map<std::int64_t, int> seen;
  for (const Dataset* part : {&sp.train, &sp.val, &sp.test}) {
    for (const auto id : part->row_ids()) ++seen[id];
  }
  EXPECT_EQ(seen.size(), gen.labeled.rows());
  for (const auto& [id, count] : seen) EXPECT_EQ(count, 1) << id;
}

TEST(Date, ParseAndValidate) {
  const Date d = Date::parse("2024-02-29");
  EXPECT_EQ(d.str(), "2024-02-29");
  EXPECT_EQ(d.month_key(), "2024-02");
  EXPECT_THROW(Date::parse("2023-02-29"), IngestionError);
  EXPECT_THROW(Date::parse("2024-13-01"), IngestionError);
  EXPECT_THROW(Date::parse("20240101"), IngestionError);
}

TEST(Synth, SameSeedIsByteIdentical) {
  GeneratorConfig cfg;
  cfg.n_labeled = 500;
  cfg.n_unlabeled = 500;
  const auto a = synth_generate(cfg, 17), b = synth_generate(cfg, 17), c = synth_generate(cfg, 18);
  EXPECT_EQ(to_csv(a.labeled), to_csv(b.labeled));
  EXPECT_EQ(to_csv(a.unlabeled), to_csv(b.unlabeled));
  EXPECT_NE(to_csv(a.labeled), to_csv(c.labeled));
  EXPECT_FALSE(a.unlabeled.has_labels());
}

TEST(Synth, NoMnarMeansIndependentMissingness) {
  GeneratorConfig cfg;
  cfg.kappa = 0.0;
  cfg.n_labeled = 20000;
  cfg.n_unlabeled = 0;
  const auto ds = synth_generate(cfg, 21).labeled;
  const std::vector<double> y(ds.labels().begin(), ds.labels().end());
  for (std::size_t k = 0; k < ds.features(); ++k) {
    std::vector<int> ind(ds.rows());
    for (std::size_t r = 0; r < ds.rows(); ++r) ind[r] = ds.is_missing(r, k);
    EXPECT_LT(mutual_information_bits(ind, y), 0.005) << ds.schema.features[k].name;
  }
}

TEST(Synth, FullMnarMakesIndicatorPredictive) {
  GeneratorConfig cfg;
  cfg.kappa = 1.0;
  cfg.n_labeled = 20000;
  cfg.n_unlabeled = 0;
  const auto ds = synth_generate(cfg, 21).labeled;
  const std::vector<double> y(ds.labels().begin(), ds.labels().end());
  double best = 0.0;
  for (std::size_t k = 0; k < ds.features(); ++k) {
    std::vector<int> ind(ds.rows());
    for (std::size_t r = 0; r < ds.rows(); ++r) ind[r] = ds.is_missing(r, k);
    const double auc = indicator_auc(ind, y);
    // The indicator may predict either class; its complement is an equally valid score.
    best = std::max({best, auc, 1.0 - auc});
  }
  EXPECT_GE(best, 0.60);
}

TEST(Synth, InvalidConfigIsProtocolError) {
  GeneratorConfig cfg;
  cfg.kappa = 1.5;
  EXPECT_THROW(synth_generate(cfg, 1), ProtocolError);
  cfg = GeneratorConfig{};
  cfg.d_num = cfg.d_cat = 0;
  EXPECT_THROW(synth_generate(cfg, 1), ProtocolError);
  cfg = GeneratorConfig{};
  cfg.unlabeled_months = 13;
  EXPECT_THROW(synth_generate(cfg, 1), ProtocolError);
}
