#ifndef RNSIM_CLI_STAGES_HPP
#define RNSIM_CLI_STAGES_HPP

// The pipeline stages behind the command line tool. Each stage reads its
// inputs from and writes its outputs to one working directory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rnsim/cli_io.hpp"
#include "rnsim/simulator_pipeline.hpp"
#include "rnsim/synthetic_market.hpp"

namespace rnsim {

namespace files {
inline constexpr const char* market = "market.csv";
inline constexpr const char* config = "config_effective.json";
inline constexpr const char* codec = "codec.json";
inline constexpr const char* physical = "physical.json";
inline constexpr const char* physical_summary = "fit_physical.json";
inline constexpr const char* dataset = "weighted_dataset.bin";
inline constexpr const char* diagnostics = "dataset_diagnostics.csv";
inline constexpr const char* dataset_summary = "remove_drift.json";
inline constexpr const char* weights_hist = "weights_hist.csv";
inline constexpr const char* risk_neutral = "risk_neutral.json";
inline constexpr const char* curves = "training_curves.csv";
inline constexpr const char* drift_report = "drift_report.json";
inline constexpr const char* pnl_scatter = "pnl_scatter.csv";
inline constexpr const char* pnl_scatter_q = "pnl_scatter_q.csv";
inline constexpr const char* paths = "paths.csv";
inline constexpr const char* simulate_summary = "simulate.json";
}  // namespace files

struct Logger {
  bool verbose = false;
  void info(const std::string& m) const {
    if (verbose) std::cerr << "rnsim: " << m << "\n";
  }
  void warn(const std::string& m) const { std::cerr << "rnsim: warning: " << m << "\n"; }
};

struct StageContext {
  PipelineConfig config;
  std::filesystem::path out;
  Logger log;

  GridSpecPtr spec() const { return make_grid_spec(config.grid); }
  std::filesystem::path at(const char* name) const { return out / name; }
  std::filesystem::path market_path() const {
    return config.market_csv.empty() ? at(files::market) : std::filesystem::path(config.market_csv);
  }
};

namespace detail {

inline void prepare_out(const StageContext& ctx) {
  std::error_code ec;
  std::filesystem::create_directories(ctx.out, ec);
  if (ec) throw IoError("cannot create output directory " + ctx.out.string() + ": " + ec.message());
  save_json(ctx.at(files::config), config_to_json(ctx.config));
}

inline void update_curves(const StageContext& ctx, const std::string& stage, const FitReport& r) {
  const auto path = ctx.at(files::curves);
  const std::string existing = std::filesystem::exists(path) ? read_text(path) : std::string();
  write_text(path, merge_training_curves(existing, stage, r));
}

inline std::string fmt_pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f%%", x);
  return buf;
}

inline std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline void write_code_kde(const StageContext& ctx, const std::string& name, const Eigen::MatrixXd& codes) {
  if (codes.rows() < 2 || codes.cols() < 100) return;
  const Kde2 k = kde2(codes.row(0).transpose(), codes.row(1).transpose(), ctx.config.evaluation.kde_lattice);
  write_text(ctx.out / ("kde_" + name + ".csv"), format_kde(k));
}

}  // namespace detail

inline MarketSeries load_market(const StageContext& ctx) {
  const MarketSeries s = load_market_csv(ctx.market_path(), ctx.spec());
  ctx.log.info("loaded " + std::to_string(s.size()) + " market rows from " + ctx.market_path().string());
  return s;
}

inline Codec load_codec(const StageContext& ctx) { return codec_from_json(load_json(ctx.at(files::codec)), ctx.spec()); }

inline ConditionalFlow load_flow(const StageContext& ctx, const char* name) { return flow_from_json(load_json(ctx.at(name))); }

// -- stages -------------------------------------------------------------------

inline void stage_synth(const StageContext& ctx) {
  detail::prepare_out(ctx);
  SyntheticMarketConfig cfg = ctx.config.synthetic;
  cfg.seed = ctx.config.seeds().synthetic;
  const MarketSeries s = synth_generate(ctx.spec(), cfg);
  write_market_csv(ctx.at(files::market), s);
  ctx.log.info("wrote " + std::to_string(s.size()) + " synthetic days to " + ctx.at(files::market).string());
}

inline void stage_fit_physical(const StageContext& ctx) {
  detail::prepare_out(ctx);
  const PipelineConfig& c = ctx.config;
  const MarketSeries history = load_market(ctx);
  check_history(history);
  const Eigen::MatrixXd dlvs = history.dlv_columns();
  Codec codec(ctx.spec(), c.codec.arch, dlvs, c.seeds().codec);
  FitConfig cf = c.codec.fit;
  cf.seed = c.seeds().codec;
  const FitReport cr = fit_autoencoder(codec, dlvs, cf);
  ctx.log.info("autoencoder: " + std::to_string(cr.epochs_run) + " epochs, best validation loss " +
               fmt(cr.best_validation_loss));
  save_json(ctx.at(files::codec), to_json(codec));
  detail::update_curves(ctx, "codec", cr);

  const PhysicalFit p = fit_physical(history, codec, c.flow, c.seeds().physical);
  ctx.log.info("physical flow: " + std::to_string(p.report.epochs_run) + " epochs, held-out NLL " +
               fmt(p.heldout_nll) + " (histogram baseline " + fmt(p.baseline_nll) + ")");
  if (p.heldout_nll > p.baseline_nll) ctx.log.warn("physical flow does not beat the unconditional histogram baseline");
  save_json(ctx.at(files::physical), to_json(p.flow));
  detail::update_curves(ctx, "physical", p.report);

  const Eigen::MatrixXd codes = encode_history(codec, history);
  detail::write_code_kde(ctx, "history_code_0_1", codes);
  save_json(ctx.at(files::physical_summary),
            {{"format", "rnsim-fit-physical"},
             {"version", kReportVersion},
             {"days", history.size()},
             {"codec_reconstruction_loss", reconstruction_loss(codec, dlvs)},
             {"codec_epochs", cr.epochs_run},
             {"flow_epochs", p.report.epochs_run},
             {"flow_best_epoch", p.report.best_epoch},
             {"heldout_nll", p.heldout_nll},
             {"histogram_baseline_nll", p.baseline_nll},
             {"code_lo", detail::to_vec(codec.code_lo())},
             {"code_hi", detail::to_vec(codec.code_hi())}});
}

inline void stage_remove_drift(const StageContext& ctx) {
  detail::prepare_out(ctx);
  const PipelineConfig& c = ctx.config;
  const MarketSeries history = load_market(ctx);
  const Codec codec = load_codec(ctx);
  const ConditionalFlow physical = load_flow(ctx, files::physical);
  check_flow_layout(physical.architecture(), codec.latent_dim());
  const Eigen::MatrixXd codes = encode_history(codec, history);
  Eigen::Index last_report = 0;
  const Progress progress = [&](Eigen::Index done, Eigen::Index total) {
    if (done * 10 / total > last_report || done == total) {
      last_report = done * 10 / total;
      ctx.log.info("drift removal: " + std::to_string(done) + "/" + std::to_string(total) + " conditions");
    }
  };
  const WeightedDataset w =
      build_weighted_dataset(physical, codec, codes, c.instruments, c.drift_removal, c.seeds().dataset, progress);
  for (const auto& d : w.diagnostics)
    if (!d.converged) ctx.log.warn("condition " + std::to_string(d.condition) + " skipped: " + d.message);
  write_weighted_dataset(ctx.at(files::dataset), w);
  write_text(ctx.at(files::diagnostics), format_diagnostics(w));
  const Histogram h = histogram(w.data.weights, c.evaluation.weight_bins, 0.0, c.evaluation.weight_max);
  write_text(ctx.at(files::weights_hist), format_histogram(h));

  double max_drift = 0.0;
  for (const auto& d : w.diagnostics)
    if (d.converged) max_drift = std::max(max_drift, d.max_reweighted_drift);
  const auto mode_bin = std::max_element(h.counts.begin(), h.counts.end()) - h.counts.begin();
  const Eigen::ArrayXd wc = w.data.weights.array() - w.data.weights.mean();
  const double sd = std::sqrt(wc.square().mean());
  save_json(ctx.at(files::dataset_summary),
            {{"format", "rnsim-remove-drift"},
             {"version", kReportVersion},
             {"conditions", static_cast<Eigen::Index>(w.diagnostics.size())},
             {"skipped", w.skipped},
             {"samples_per_condition", w.samples_per_condition},
             {"records", w.data.size()},
             {"risk_aversion", c.drift_removal.risk_aversion},
             {"max_reweighted_drift", max_drift},
             {"weight_min", w.data.weights.minCoeff()},
             {"weight_max", w.data.weights.maxCoeff()},
             {"weight_std", sd},
             {"weight_skewness", (wc.cube().mean()) / (sd * sd * sd)},
             {"weight_mode", 0.5 * (h.edges[mode_bin] + h.edges[mode_bin + 1])}});
  ctx.log.info("weighted dataset: " + std::to_string(w.data.size()) + " records, " + std::to_string(w.skipped) +
               " skipped conditions, max reweighted drift " + fmt(max_drift));
}

inline void stage_fit_rn(const StageContext& ctx) {
  detail::prepare_out(ctx);
  const PipelineConfig& c = ctx.config;
  const ConditionalFlow physical = load_flow(ctx, files::physical);
  const WeightedDataset w = read_weighted_dataset(ctx.at(files::dataset));
  ctx.log.info("risk-neutral flow: training on " + std::to_string(w.data.size()) + " weighted records");
  const RiskNeutralFit q =
      fit_risk_neutral(w, physical, c.risk_neutral_flow(), c.seeds().risk_neutral, c.risk_neutral.warm_start);
  ctx.log.info("risk-neutral flow: " + std::to_string(q.report.epochs_run) + " epochs, best validation loss " +
               fmt(q.report.best_validation_loss));
  save_json(ctx.at(files::risk_neutral), to_json(q.flow));
  detail::update_curves(ctx, "risk_neutral", q.report);
}

/// Everything the evaluate stage measures at one condition.
struct ConditionEvaluation {
  Eigen::Index index = 0;
  std::string date;
  DriftReport drift;
  PnlResult pnl_p, pnl_q;
  Eigen::MatrixXd next_codes_p, next_codes_q;  // l x N
};

inline ConditionEvaluation evaluate_condition(const ConditionalFlow& p, const ConditionalFlow& q, const Codec& codec,
                                              const Eigen::VectorXd& code, const PipelineConfig& c,
                                              std::uint64_t seed) {
  const Eigen::Index n = c.evaluation.samples;
  Rng r1 = substream(seed, 0), r2 = substream(seed, 0);
  const OneStepSample sp = sample_one_step(p, codec, code, c.instruments, n, r1);
  const OneStepSample sq = sample_one_step(q, codec, code, c.instruments, n, r2);
  ConditionEvaluation e;
  e.drift = drift_report_from_gains(c.instruments, sp.current_prices, sp.gains, sq.gains);
  add_code_shift(e.drift, sp.targets, sq.targets);
  e.drift.seed = seed;
  const double lambda = c.drift_removal.risk_aversion;
  e.pnl_p = pnl_from_gains(sp.gains, sp.targets.row(0).transpose(), lambda, c.drift_removal.newton);
  e.pnl_q = pnl_from_gains(sq.gains, sq.targets.row(0).transpose(), lambda, c.drift_removal.newton);
  const Eigen::Index l = codec.latent_dim();
  e.next_codes_p = sp.targets.bottomRows(l).colwise() + code;
  e.next_codes_q = sq.targets.bottomRows(l).colwise() + code;
  return e;
}

inline nlohmann::json evaluation_json(const ConditionEvaluation& e) {
  return {{"condition", e.index},
          {"date", e.date},
          {"seed", e.drift.seed},
          {"instruments", drift_rows_json(e.drift)},
          {"latent_code_shift", detail::to_vec(e.drift.code_shift)},
          {"latent_code_shift_standard_error", detail::to_vec(e.drift.code_shift_se)},
          {"pnl", {{"P", pnl_json(e.pnl_p)}, {"Q", pnl_json(e.pnl_q)}}}};
}

inline std::vector<ConditionEvaluation> stage_evaluate(const StageContext& ctx) {
  detail::prepare_out(ctx);
  const PipelineConfig& c = ctx.config;
  const MarketSeries history = load_market(ctx);
  const Codec codec = load_codec(ctx);
  const ConditionalFlow p = load_flow(ctx, files::physical);
  const ConditionalFlow q = load_flow(ctx, files::risk_neutral);
  c.instruments.validate(*codec.spec());
  const Eigen::MatrixXd codes = encode_history(codec, history);
  const auto conditions = evaluation_conditions(history.size(), c.evaluation.random_conditions, c.seeds().evaluation);
  std::vector<ConditionEvaluation> out;
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t k = 0; k < conditions.size(); ++k) {
    const Eigen::Index t = conditions[k];
    ConditionEvaluation e = evaluate_condition(p, q, codec, codes.col(t), c, splitmix64(c.seeds().evaluation + k));
    e.index = t;
    e.date = history.dates[t];
    e.drift.condition = t;
    for (const auto& d : e.drift.rows)
      ctx.log.info(e.date + " " + d.name + ": P drift " + detail::fmt_pct(d.p_pct) + ", Q drift " +
                   detail::fmt_pct(d.q_pct));
    list.push_back(evaluation_json(e));
    out.push_back(std::move(e));
  }
  std::vector<std::string> names;
  for (const auto& x : c.instruments.items) names.push_back(x.name());
  save_json(ctx.at(files::drift_report), {{"format", "rnsim-drift-report"},
                                          {"version", kReportVersion},
                                          {"samples", c.evaluation.samples},
                                          {"risk_aversion", c.drift_removal.risk_aversion},
                                          {"instrument_names", names},
                                          {"conditions", list}});
  // Scatter and density data at the first (last historical) condition.
  const ConditionEvaluation& first = out.front();
  write_text(ctx.at(files::pnl_scatter), format_pnl_scatter(first.pnl_p));
  write_text(ctx.at(files::pnl_scatter_q), format_pnl_scatter(first.pnl_q));
  detail::write_code_kde(ctx, "p_code_0_1", first.next_codes_p);
  detail::write_code_kde(ctx, "q_code_0_1", first.next_codes_q);
  return out;
}

inline SimulatedPaths stage_simulate(const StageContext& ctx) {
  detail::prepare_out(ctx);
  const PipelineConfig& c = ctx.config;
  const MarketSeries history = load_market(ctx);
  const Codec codec = load_codec(ctx);
  const bool use_q = c.simulation.model == "q";
  const ConditionalFlow model = load_flow(ctx, use_q ? files::risk_neutral : files::physical);
  const Eigen::Index start = c.simulation.start < 0 ? history.size() - 1 : c.simulation.start;
  if (start >= history.size()) throw ConfigError("simulation.start lies beyond the end of the history");
  const SimulatedPaths paths =
      simulate(model, codec, history.state(start), c.simulation.horizon, c.simulation.paths, c.seeds().simulation);
  if (paths.out_of_range_codes > 0)
    ctx.log.warn(std::to_string(paths.out_of_range_codes) +
                 " simulated codes fall outside the autoencoder's validated range");
  const GridSpecPtr spec = codec.spec();
  std::string csv = "path,step";
  for (const auto& h : market_csv_header(*spec))
    if (h != "date") csv += "," + h;
  csv += "\n";
  Eigen::Index arbitrage = 0;
  for (Eigen::Index p = 0; p < paths.spots.rows(); ++p)
    for (std::size_t h = 0; h < paths.codes.size(); ++h) {
      const DlvGrid dlv = decode(codec, paths.codes[h].col(p));
      if (!check_static_arbitrage(price_from_dlv(dlv)).empty()) ++arbitrage;
      csv += std::to_string(p) + "," + std::to_string(h) + "," + fmt(paths.spots(p, h));
      for (int i = 0; i < spec->m(); ++i)
        for (int j = 0; j < spec->n(); ++j) csv += "," + fmt(dlv.values(i, j));
      csv += "\n";
    }
  write_text(ctx.at(files::paths), csv);
  save_json(ctx.at(files::simulate_summary), {{"format", "rnsim-simulate"},
                                              {"version", kReportVersion},
                                              {"model", c.simulation.model},
                                              {"start", start},
                                              {"horizon", c.simulation.horizon},
                                              {"paths", c.simulation.paths},
                                              {"out_of_range_codes", paths.out_of_range_codes},
                                              {"arbitrage_violations", arbitrage}});
  ctx.log.info("simulated " + std::to_string(c.simulation.paths) + " paths of " +
               std::to_string(c.simulation.horizon) + " steps");
  return paths;
}

}  // namespace rnsim

#endif  // RNSIM_CLI_STAGES_HPP
