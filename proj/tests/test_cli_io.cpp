#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "rnsim/cli_io.hpp"
#include "rnsim/synthetic_market.hpp"
#include "test_support.hpp"

using namespace rnsim;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("rnsim_test_" + std::to_string(::getpid()) + "_" + name);
}

MarketSeries small_market(int days = 20) {
  SyntheticMarketConfig cfg;
  cfg.horizon = days;
  cfg.seed = 11;
  return synth_generate(rnsim::testing::reference_spec(), cfg);
}

template <class E>
std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return "<no exception>";
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  const PipelineConfig c = validate_config("");
  EXPECT_EQ(c.codec.arch.latent_dim, 3);
  EXPECT_EQ(c.flow.arch.dim, 4);
  EXPECT_EQ(c.flow.arch.condition_dim, 3);
  EXPECT_EQ(c.grid.m(), 2);
  EXPECT_EQ(c.grid.n(), 13);
  EXPECT_DOUBLE_EQ(c.drift_removal.risk_aversion, 1.0);
  EXPECT_EQ(c.drift_removal.samples_per_condition, 1024);
  EXPECT_EQ(c.instruments.size(), 3);
}

TEST(Config, DerivesFlowDimensionsFromLatentDim) {
  const PipelineConfig c = validate_config(R"({"codec": {"latent_dim": 5}})");
  EXPECT_EQ(c.flow.arch.dim, 6);
  EXPECT_EQ(c.flow.arch.condition_dim, 5);
}

TEST(Config, InconsistentDimensionsAreRejected) {
  const std::string msg = error_of<ConfigError>(
      [] { validate_config(R"({"codec": {"latent_dim": 3}, "flow": {"dim": 6, "condition_dim": 5}})"); });
  EXPECT_NE(msg.find("inconsistent dimensions"), std::string::npos) << msg;
}

TEST(Config, UnknownKeysNameTheirPath) {
  const std::string msg = error_of<ConfigError>([] { validate_config(R"({"flow": {"fit": {"epochs": 3}}})"); });
  EXPECT_NE(msg.find("flow.fit.epochs"), std::string::npos) << msg;
  EXPECT_THROW(validate_config(R"({"colour": 1})"), ConfigError);
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(validate_config(R"({"drift_removal": {"risk_aversion": 0}})"), ConfigError);
  EXPECT_THROW(validate_config(R"({"codec": {"activation": "swish"}})"), ConfigError);
  EXPECT_THROW(validate_config(R"({"instruments": [{"type": "call", "tau": 61, "strike": 1}]})"), ConfigError);
  EXPECT_THROW(validate_config(R"({"seed": "one"})"), ConfigError);
  EXPECT_THROW(validate_config("{"), ConfigError);
}

TEST(Config, EffectiveConfigRoundTrips) {
  const PipelineConfig a = validate_config(
      R"({"seed": 9, "instruments": [{"type": "spot"}, {"type": "call", "tau": 120, "strike": 0.9}],
          "risk_neutral": {"warm_start": true}, "flow": {"hidden": [8, 8]}})");
  const PipelineConfig b = validate_config(config_to_json(a).dump());
  EXPECT_EQ(config_to_json(a), config_to_json(b));
  EXPECT_EQ(b.instruments.size(), 2);
  EXPECT_TRUE(b.risk_neutral.warm_start);
}

TEST(Config, StageSeedsAreDistinctAndFollowTheMasterSeed) {
  PipelineConfig c;
  const StageSeeds s = c.seeds();
  EXPECT_NE(s.codec, s.physical);
  EXPECT_NE(s.dataset, s.risk_neutral);
  c.seed = 2;
  EXPECT_NE(c.seeds().codec, s.codec);
}

TEST(MarketCsv, RoundTripsToFullPrecision) {
  const MarketSeries a = small_market();
  const MarketSeries b = parse_market_csv(format_market_csv(a), a.spec, "mem");
  ASSERT_EQ(a.size(), b.size());
  for (Eigen::Index t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a.dates[t], b.dates[t]);
    EXPECT_NEAR(a.spots[t], b.spots[t], 1e-12);
    EXPECT_LE((a.dlvs[t].values - b.dlvs[t].values).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a.prices[t].values - b.prices[t].values).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MarketCsv, FileRoundTrip) {
  const MarketSeries a = small_market(5);
  const auto path = temp_path("market.csv");
  write_market_csv(path, a);
  const MarketSeries b = load_market_csv(path, a.spec);
  std::filesystem::remove(path);
  EXPECT_EQ(format_market_csv(a), format_market_csv(b));
}

TEST(MarketCsv, NegativeDlvNamesTheRow) {
  const MarketSeries a = small_market(6);
  std::string text = format_market_csv(a);
  // Data row 4 is line 5; replace its third field (first DLV) by a negative value.
  std::size_t pos = 0;
  for (int line = 0; line < 4; ++line) pos = text.find('\n', pos) + 1;
  const std::size_t c1 = text.find(',', pos), c2 = text.find(',', c1 + 1), c3 = text.find(',', c2 + 1);
  text.replace(c2 + 1, c3 - c2 - 1, "-0.2");
  const std::string msg = error_of<DataError>([&] { parse_market_csv(text, a.spec, "m.csv"); });
  EXPECT_NE(msg.find("row 4"), std::string::npos) << msg;
  EXPECT_NE(msg.find("dlv_60_0.7"), std::string::npos) << msg;
}

TEST(MarketCsv, RejectsBadHeadersDatesAndFields) {
  const MarketSeries a = small_market(4);
  const std::string good = format_market_csv(a);
  std::string bad_header = good;
  bad_header.replace(bad_header.find("spot"), 4, "SPOT");
  EXPECT_THROW(parse_market_csv(bad_header, a.spec, "m"), DataError);

  std::string bad_date = good;
  bad_date.replace(bad_date.find(a.dates[1]), 10, a.dates[0]);
  EXPECT_NE(error_of<DataError>([&] { parse_market_csv(bad_date, a.spec, "m"); }).find("row 2"), std::string::npos);

  std::string junk = good;
  std::size_t p = junk.find('\n') + 1;
  for (int f = 0; f < 8; ++f) p = junk.find(',', p) + 1;
  junk.replace(p, junk.find(',', p) - p, "abc");
  EXPECT_NE(error_of<DataError>([&] { parse_market_csv(junk, a.spec, "m"); }).find("row 1"), std::string::npos);
}

TEST(MarketCsv, AnyPositiveDlvRowPricesArbitrageFree) {
  const MarketSeries a = small_market(3);
  std::string spike = format_market_csv(a);
  std::size_t p = spike.find('\n') + 1;
  for (int f = 0; f < 8; ++f) p = spike.find(',', p) + 1;
  spike.replace(p, spike.find(',', p) - p, "50");
  const MarketSeries b = parse_market_csv(spike, a.spec, "m");
  EXPECT_TRUE(check_static_arbitrage(b.prices[0]).empty());
}

TEST(WeightedDatasetFile, RoundTripsExactly) {
  WeightedDataset w;
  w.samples_per_condition = 4;
  w.data.conditions = Eigen::MatrixXd::Random(3, 12);
  w.data.targets = Eigen::MatrixXd::Random(4, 12);
  w.data.weights = Eigen::VectorXd::Random(12).cwiseAbs();
  const auto path = temp_path("ds.bin");
  write_weighted_dataset(path, w);
  const WeightedDataset r = read_weighted_dataset(path);
  EXPECT_EQ(r.samples_per_condition, 4);
  EXPECT_EQ(r.data.conditions, w.data.conditions);
  EXPECT_EQ(r.data.targets, w.data.targets);
  EXPECT_EQ(r.data.weights, w.data.weights);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(read_weighted_dataset(path), DataError);
  write_text(path, "not a dataset at all, just text");
  EXPECT_THROW(read_weighted_dataset(path), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_weighted_dataset(path), IoError);
}

TEST(Reports, DriftRowsCarryTheTableLabels) {
  DriftReport r;
  InstrumentDrift d;
  d.name = "spot";
  d.p_pct = 1.0;
  d.q_pct = 0.0;
  d.ratio = std::numeric_limits<double>::infinity();
  r.rows.push_back(d);
  const nlohmann::json j = drift_rows_json(r);
  for (const char* key : {"P drift", "Q drift", "P drift (%)", "Q drift (%)", "Ratio"})
    EXPECT_TRUE(j[0].contains(key)) << key;
  EXPECT_TRUE(j[0]["Ratio"].is_null());
}

TEST(Reports, TrainingCurvesMergeByStage) {
  FitReport a;
  a.train_loss = {3, 2};
  a.validation_loss = {3.5, 2.5};
  a.best_so_far = {3.5, 2.5};
  FitReport b = a;
  b.train_loss = {1};
  b.validation_loss = {1};
  b.best_so_far = {1};
  std::string csv = merge_training_curves("", "risk_neutral", a);
  csv = merge_training_curves(csv, "codec", a);
  csv = merge_training_curves(csv, "risk_neutral", b);
  const CsvTable t = parse_csv(csv, "curves");
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[0][0], "codec");
  EXPECT_EQ(t.rows[1][0], "codec");
  EXPECT_EQ(t.rows[2][0], "risk_neutral");
  EXPECT_EQ(t.rows[2][2], "1");
}

TEST(Reports, HistogramAndScatterFormats) {
  const Histogram h = histogram(Eigen::VectorXd::LinSpaced(10, 0.05, 0.95), 2, 0.0, 1.0);
  const CsvTable t = parse_csv(format_histogram(h), "h");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][2], "5");
  PnlResult p;
  p.spot_move = Eigen::VectorXd::Constant(3, 0.01);
  p.pnl = Eigen::VectorXd::Constant(3, -0.5);
  EXPECT_EQ(parse_csv(format_pnl_scatter(p), "s").rows.size(), 3u);
}
