#ifndef RNSIM_CLI_IO_HPP
#define RNSIM_CLI_IO_HPP

// Configuration, market CSV files, checkpoints, the binary weighted-dataset
// file and every report written by the command line tool.

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rnsim/density_flow.hpp"
#include "rnsim/drift_removal.hpp"
#include "rnsim/errors.hpp"
#include "rnsim/grid_model.hpp"
#include "rnsim/instruments.hpp"
#include "rnsim/manifold_codec.hpp"
#include "rnsim/market_series.hpp"
#include "rnsim/simulator_pipeline.hpp"
#include "rnsim/synthetic_market.hpp"

namespace rnsim {

inline constexpr int kReportVersion = 1;

// -- configuration ------------------------------------------------------------

struct CodecSettings {
  CodecArchitecture arch;
  FitConfig fit;
};

struct RiskNeutralSettings {
  FitConfig fit;
  bool warm_start = false;  // start q_theta from p_eta's parameters
};

struct EvaluationSettings {
  Eigen::Index samples = 1 << 16;
  int random_conditions = 10;
  int kde_lattice = 64;
  int weight_bins = 60;
  double weight_max = 3.0;
};

struct SimulationSettings {
  int horizon = 20;
  Eigen::Index paths = 1000;
  Eigen::Index start = -1;  // history row; -1 = last
  std::string model = "q";  // "p" or "q"
};

struct StageSeeds {
  std::uint64_t synthetic, codec, physical, dataset, risk_neutral, evaluation, simulation;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline FitConfig default_codec_fit() {
  FitConfig f;
  f.max_epochs = 300;
  f.min_epochs = 50;
  f.patience = 30;
  f.batch_size = 64;
  return f;
}

inline FitConfig default_physical_fit() {
  FitConfig f;
  f.max_epochs = 200;
  f.min_epochs = 10;
  f.patience = 20;
  f.batch_size = 128;
  f.adam.learning_rate = 3e-3;
  return f;
}

inline FitConfig default_risk_neutral_fit() {
  FitConfig f;
  f.max_epochs = 40;
  f.min_epochs = 5;
  f.patience = 8;
  f.batch_size = 4096;
  f.adam.learning_rate = 3e-3;
  f.lr_decay = 0.95;
  return f;
}

struct PipelineConfig {
  std::uint64_t seed = 1;
  GridSpec grid;
  CodecSettings codec{CodecArchitecture{}, default_codec_fit()};
  FlowSettings flow{FlowArchitecture{}, default_physical_fit(), 0.1};
  RiskNeutralSettings risk_neutral{default_risk_neutral_fit(), false};
  DatasetSettings drift_removal;
  InstrumentSet instruments = InstrumentSet::reference();
  EvaluationSettings evaluation;
  SimulationSettings simulation;
  SyntheticMarketConfig synthetic;
  std::string market_csv;  // empty: <out>/market.csv

  StageSeeds seeds() const {
    auto s = [this](std::uint64_t stage) { return splitmix64(seed ^ (stage * 0x632be59bd9b4e019ull)); };
    return {s(1), s(2), s(3), s(4), s(5), s(6), s(7)};
  }

  FlowSettings risk_neutral_flow() const { return {flow.arch, risk_neutral.fit, flow.bound_margin}; }

  void validate() const {
    grid.validate();
    const int l = codec.arch.latent_dim;
    if (l < 1 || l > grid.size()) throw ConfigError("config: codec.latent_dim must lie in [1, mn]");
    if (flow.arch.dim != 1 + l || flow.arch.condition_dim != l) {
      std::ostringstream os;
      os << "config: inconsistent dimensions, latent_dim " << l << " requires flow.dim " << 1 + l
         << " and flow.condition_dim " << l << " (got " << flow.arch.dim << " and " << flow.arch.condition_dim << ")";
      throw ConfigError(os.str());
    }
    if (flow.arch.bins < 2) throw ConfigError("config: flow.bins must be >= 2");
    if (!(flow.bound_margin >= 0.0)) throw ConfigError("config: flow.bound_margin must be >= 0");
    if (!(drift_removal.risk_aversion > 0.0)) throw ConfigError("config: risk_aversion must be > 0");
    if (drift_removal.samples_per_condition < 2) throw ConfigError("config: samples_per_condition must be >= 2");
    if (!(drift_removal.max_skip_fraction >= 0.0 && drift_removal.max_skip_fraction <= 1.0))
      throw ConfigError("config: max_skip_fraction must lie in [0, 1]");
    if (!(drift_removal.newton.tolerance > 0.0) || drift_removal.newton.max_iterations < 1)
      throw ConfigError("config: newton tolerance and iteration limit must be positive");
    for (const FitConfig* f : {&codec.fit, &flow.fit, &risk_neutral.fit}) {
      if (f->batch_size < 1 || f->max_epochs < 1 || f->min_epochs < 0 || f->patience < 0)
        throw ConfigError("config: fit epochs, patience and batch size must be positive");
      if (!(f->validation_fraction > 0.0 && f->validation_fraction < 1.0))
        throw ConfigError("config: validation_fraction must lie in (0, 1)");
      if (!(f->adam.learning_rate > 0.0) || !(f->lr_decay > 0.0 && f->lr_decay <= 1.0))
        throw ConfigError("config: learning_rate must be > 0 and lr_decay in (0, 1]");
    }
    auto spec = make_grid_spec(grid);
    instruments.validate(*spec);
    if (evaluation.samples < 2) throw ConfigError("config: evaluation.samples must be >= 2");
    if (evaluation.random_conditions < 0) throw ConfigError("config: evaluation.random_conditions must be >= 0");
    if (evaluation.kde_lattice < 2 || evaluation.weight_bins < 1 || !(evaluation.weight_max > 0.0))
      throw ConfigError("config: invalid evaluation lattice or histogram settings");
    if (simulation.horizon < 1 || simulation.paths < 1) throw ConfigError("config: simulation horizon and paths must be >= 1");
    if (simulation.model != "p" && simulation.model != "q") throw ConfigError("config: simulation.model must be \"p\" or \"q\"");
    synthetic.validate();
  }
};

namespace detail {

// Reads the keys of one JSON object and rejects everything it did not read.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + where() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: wrong type for " + where(key));
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), path_.empty() ? key : path_ + "." + key);
  }

  const nlohmann::json* raw(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key " + where(it.key().c_str()));
  }

  std::string where(const char* key = nullptr) const {
    std::string p = path_;
    if (key) p = p.empty() ? key : p + "." + key;
    return p.empty() ? "<root>" : "\"" + p + "\"";
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_fit(Section s, FitConfig& f) {
  s.get("learning_rate", f.adam.learning_rate);
  s.get("clip_norm", f.adam.clip_norm);
  s.get("batch_size", f.batch_size);
  s.get("max_epochs", f.max_epochs);
  s.get("min_epochs", f.min_epochs);
  s.get("patience", f.patience);
  s.get("validation_fraction", f.validation_fraction);
  s.get("lr_decay", f.lr_decay);
  s.finish();
}

inline void read_activation(Section& s, Activation& a) {
  std::string name = to_string(a);
  s.get("activation", name);
  try {
    a = activation_from_string(name);
  } catch (const std::exception&) {
    throw ConfigError("config: unknown activation \"" + name + "\" at " + s.where("activation"));
  }
}

inline nlohmann::json fit_json(const FitConfig& f) {
  return {{"learning_rate", f.adam.learning_rate}, {"clip_norm", f.adam.clip_norm}, {"batch_size", f.batch_size},
          {"max_epochs", f.max_epochs},           {"min_epochs", f.min_epochs},   {"patience", f.patience},
          {"validation_fraction", f.validation_fraction}, {"lr_decay", f.lr_decay}};
}

}  // namespace detail

/// Parses a JSON document into a fully defaulted, validated configuration.
inline PipelineConfig validate_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = text.find_first_not_of(" \t\r\n") == std::string::npos ? nlohmann::json::object() : nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  PipelineConfig c;
  detail::Section root(j, "");
  root.get("seed", c.seed);
  root.get("market_csv", c.market_csv);
  if (auto g = root.child("grid")) {
    g->get("maturities", c.grid.maturities);
    g->get("strikes", c.grid.strikes);
    g->get("low_boundary_strike", c.grid.low_boundary_strike);
    g->get("high_boundary_strike", c.grid.high_boundary_strike);
    g->get("day_count", c.grid.day_count);
    g->get("substeps", c.grid.substeps);
    g->finish();
  }
  if (auto s = root.child("codec")) {
    s->get("latent_dim", c.codec.arch.latent_dim);
    s->get("hidden", c.codec.arch.hidden);
    detail::read_activation(*s, c.codec.arch.activation);
    if (auto f = s->child("fit")) detail::read_fit(*f, c.codec.fit);
    s->finish();
  }
  bool dim_given = false, cond_given = false;
  if (auto s = root.child("flow")) {
    dim_given = s->has("dim");
    cond_given = s->has("condition_dim");
    s->get("dim", c.flow.arch.dim);
    s->get("condition_dim", c.flow.arch.condition_dim);
    s->get("bins", c.flow.arch.bins);
    s->get("hidden", c.flow.arch.hidden);
    detail::read_activation(*s, c.flow.arch.activation);
    s->get("bound_margin", c.flow.bound_margin);
    if (auto f = s->child("fit")) detail::read_fit(*f, c.flow.fit);
    s->finish();
  }
  if (!dim_given) c.flow.arch.dim = 1 + c.codec.arch.latent_dim;
  if (!cond_given) c.flow.arch.condition_dim = c.codec.arch.latent_dim;
  if (auto s = root.child("risk_neutral")) {
    s->get("warm_start", c.risk_neutral.warm_start);
    if (auto f = s->child("fit")) detail::read_fit(*f, c.risk_neutral.fit);
    s->finish();
  }
  if (auto s = root.child("drift_removal")) {
    s->get("risk_aversion", c.drift_removal.risk_aversion);
    s->get("samples_per_condition", c.drift_removal.samples_per_condition);
    s->get("max_skip_fraction", c.drift_removal.max_skip_fraction);
    s->get("newton_tolerance", c.drift_removal.newton.tolerance);
    s->get("newton_max_iterations", c.drift_removal.newton.max_iterations);
    s->finish();
  }
  if (const nlohmann::json* list = root.raw("instruments")) {
    if (!list->is_array()) throw ConfigError("config: \"instruments\" must be an array");
    c.instruments.items.clear();
    for (std::size_t i = 0; i < list->size(); ++i) {
      detail::Section s((*list)[i], "instruments[" + std::to_string(i) + "]");
      std::string type;
      s.get("type", type);
      if (type == "spot") {
        c.instruments.items.push_back(Instrument::spot());
      } else if (type == "call") {
        double tau = 0.0, strike = 0.0;
        if (!s.has("tau") || !s.has("strike")) throw ConfigError("config: call instrument needs tau and strike");
        s.get("tau", tau);
        s.get("strike", strike);
        c.instruments.items.push_back(Instrument::call(tau, strike));
      } else {
        throw ConfigError("config: instrument type must be \"spot\" or \"call\" at " + s.where("type"));
      }
      s.finish();
    }
  }
  if (auto s = root.child("evaluation")) {
    s->get("samples", c.evaluation.samples);
    s->get("random_conditions", c.evaluation.random_conditions);
    s->get("kde_lattice", c.evaluation.kde_lattice);
    s->get("weight_bins", c.evaluation.weight_bins);
    s->get("weight_max", c.evaluation.weight_max);
    s->finish();
  }
  if (auto s = root.child("simulation")) {
    s->get("horizon", c.simulation.horizon);
    s->get("paths", c.simulation.paths);
    s->get("start", c.simulation.start);
    s->get("model", c.simulation.model);
    s->finish();
  }
  if (auto s = root.child("synthetic")) {
    SyntheticMarketConfig& m = c.synthetic;
    s->get("horizon", m.horizon);
    s->get("base_level", m.base_level);
    s->get("skew", m.skew);
    s->get("term_slope", m.term_slope);
    s->get("curvature", m.curvature);
    s->get("term_pivot", m.term_pivot);
    s->get("mean_reversion", m.mean_reversion);
    s->get("factor_vol", m.factor_vol);
    s->get("spot_drift", m.spot_drift);
    s->get("realized_vol_multiplier", m.realized_vol_multiplier);
    s->get("spot_level_correlation", m.spot_level_correlation);
    s->get("initial_spot", m.initial_spot);
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

/// The effective configuration, in the same schema validate_config reads.
inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& x : c.instruments.items)
    inst.push_back(x.is_spot ? nlohmann::json{{"type", "spot"}}
                             : nlohmann::json{{"type", "call"}, {"tau", x.tau}, {"strike", x.strike}});
  const SyntheticMarketConfig& m = c.synthetic;
  return {
      {"seed", c.seed},
      {"market_csv", c.market_csv},
      {"grid",
       {{"maturities", c.grid.maturities},
        {"strikes", c.grid.strikes},
        {"low_boundary_strike", c.grid.low_boundary_strike},
        {"high_boundary_strike", c.grid.high_boundary_strike},
        {"day_count", c.grid.day_count},
        {"substeps", c.grid.substeps}}},
      {"codec",
       {{"latent_dim", c.codec.arch.latent_dim},
        {"hidden", c.codec.arch.hidden},
        {"activation", to_string(c.codec.arch.activation)},
        {"fit", detail::fit_json(c.codec.fit)}}},
      {"flow",
       {{"dim", c.flow.arch.dim},
        {"condition_dim", c.flow.arch.condition_dim},
        {"bins", c.flow.arch.bins},
        {"hidden", c.flow.arch.hidden},
        {"activation", to_string(c.flow.arch.activation)},
        {"bound_margin", c.flow.bound_margin},
        {"fit", detail::fit_json(c.flow.fit)}}},
      {"risk_neutral", {{"warm_start", c.risk_neutral.warm_start}, {"fit", detail::fit_json(c.risk_neutral.fit)}}},
      {"drift_removal",
       {{"risk_aversion", c.drift_removal.risk_aversion},
        {"samples_per_condition", c.drift_removal.samples_per_condition},
        {"max_skip_fraction", c.drift_removal.max_skip_fraction},
        {"newton_tolerance", c.drift_removal.newton.tolerance},
        {"newton_max_iterations", c.drift_removal.newton.max_iterations}}},
      {"instruments", inst},
      {"evaluation",
       {{"samples", c.evaluation.samples},
        {"random_conditions", c.evaluation.random_conditions},
        {"kde_lattice", c.evaluation.kde_lattice},
        {"weight_bins", c.evaluation.weight_bins},
        {"weight_max", c.evaluation.weight_max}}},
      {"simulation",
       {{"horizon", c.simulation.horizon},
        {"paths", c.simulation.paths},
        {"start", c.simulation.start},
        {"model", c.simulation.model}}},
      {"synthetic",
       {{"horizon", m.horizon},
        {"base_level", m.base_level},
        {"skew", m.skew},
        {"term_slope", m.term_slope},
        {"curvature", m.curvature},
        {"term_pivot", m.term_pivot},
        {"mean_reversion", m.mean_reversion},
        {"factor_vol", m.factor_vol},
        {"spot_drift", m.spot_drift},
        {"realized_vol_multiplier", m.realized_vol_multiplier},
        {"spot_level_correlation", m.spot_level_correlation},
        {"initial_spot", m.initial_spot}}},
  };
}

// -- files ----------------------------------------------------------------------

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("cannot write " + path.string());
}

inline PipelineConfig load_config(const std::filesystem::path& path) { return validate_config(read_text(path)); }

inline void save_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json load_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

/// %.17g: parses back to the same double.
inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Simple comma-separated table with a header row; no quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return static_cast<int>(c);
    return -1;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable parse_csv(const std::string& text, const std::string& name) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      std::ostringstream os;
      os << name << ": line " << line_no << " has " << cells.size() << " fields, header has " << t.header.size();
      throw DataError(os.str());
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw DataError(name + ": missing header row");
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path), path.string()); }

inline double parse_double(const std::string& s, const std::string& context) {
  if (s.empty()) throw DataError(context + ": empty field");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    throw DataError(context + ": not a finite number: \"" + s + "\"");
  return v;
}

inline std::string csv_row(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  return out + "\n";
}

// -- market CSV -------------------------------------------------------------------

inline std::vector<std::string> market_csv_header(const GridSpec& spec) {
  std::vector<std::string> h{"date", "spot"};
  for (int i = 0; i < spec.m(); ++i)
    for (int j = 0; j < spec.n(); ++j) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "dlv_%g_%g", spec.maturities[i], spec.strikes[j]);
      h.emplace_back(buf);
    }
  return h;
}

inline std::string format_market_csv(const MarketSeries& s) {
  const auto header = market_csv_header(*s.spec);
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  out += "\n";
  for (Eigen::Index t = 0; t < s.size(); ++t) {
    out += s.dates[t] + "," + fmt(s.spots[t]);
    for (int i = 0; i < s.spec->m(); ++i)
      for (int j = 0; j < s.spec->n(); ++j) out += "," + fmt(s.dlvs[t].values(i, j));
    out += "\n";
  }
  return out;
}

inline void write_market_csv(const std::filesystem::path& path, const MarketSeries& s) {
  write_text(path, format_market_csv(s));
}

inline bool is_iso_date(const std::string& d) {
  if (d.size() != 10 || d[4] != '-' || d[7] != '-') return false;
  for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (d[i] < '0' || d[i] > '9') return false;
  const int m = std::stoi(d.substr(5, 2)), day = std::stoi(d.substr(8, 2));
  return m >= 1 && m <= 12 && day >= 1 && day <= 31;
}

/// Parses a market file; DLVs are priced through the grid map and every row
/// is checked. Errors name the 1-based data row.
inline MarketSeries parse_market_csv(const std::string& text, const GridSpecPtr& spec, const std::string& name) {
  const CsvTable t = parse_csv(text, name);
  const auto expected = market_csv_header(*spec);
  if (t.header != expected) {
    std::ostringstream os;
    os << name << ": header does not match the grid (expected " << expected.size() << " columns: date, spot, "
       << expected[2] << " ... " << expected.back() << ")";
    for (std::size_t c = 0; c < std::min(t.header.size(), expected.size()); ++c)
      if (t.header[c] != expected[c]) {
        os << "; column " << c + 1 << " is \"" << t.header[c] << "\", expected \"" << expected[c] << "\"";
        break;
      }
    throw DataError(os.str());
  }
  MarketSeries s;
  s.spec = spec;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string at = name + ": row " + std::to_string(r + 1);
    if (!is_iso_date(row[0])) throw DataError(at + ": date must be yyyy-mm-dd, got \"" + row[0] + "\"");
    if (!s.dates.empty() && !(row[0] > s.dates.back()))
      throw DataError(at + ": dates must be strictly increasing (" + row[0] + " after " + s.dates.back() + ")");
    const double spot = parse_double(row[1], at + ", spot");
    if (!(spot > 0.0)) throw DataError(at + ": spot must be positive");
    Eigen::MatrixXd v(spec->m(), spec->n());
    for (int i = 0; i < spec->m(); ++i)
      for (int j = 0; j < spec->n(); ++j) {
        const std::size_t c = 2 + i * spec->n() + j;
        v(i, j) = parse_double(row[c], at + ", " + expected[c]);
        if (!(v(i, j) > 0.0)) throw DataError(at + ": " + expected[c] + " must be positive");
      }
    DlvGrid dlv(spec, std::move(v));
    PriceGrid prices = price_from_dlv(dlv);
    const auto violations = check_static_arbitrage(prices);
    if (!violations.empty())
      throw ArbitrageError(at + ": derived prices violate static arbitrage (" + to_string(violations.front().kind) + ")");
    s.dates.push_back(row[0]);
    s.spots.push_back(spot);
    s.dlvs.push_back(std::move(dlv));
    s.prices.push_back(std::move(prices));
  }
  if (s.size() < 2) throw DataError(name + ": need at least two rows");
  return s;
}

inline MarketSeries load_market_csv(const std::filesystem::path& path, const GridSpecPtr& spec) {
  return parse_market_csv(read_text(path), spec, path.string());
}

// -- weighted dataset file ------------------------------------------------------

inline constexpr char kDatasetMagic[8] = {'R', 'N', 'S', 'I', 'M', 'W', 'D', 'S'};

inline void write_weighted_dataset(const std::filesystem::path& path, const WeightedDataset& w) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::int64_t head[5] = {kReportVersion, w.data.conditions.rows(), w.data.targets.rows(), w.data.size(),
                                w.samples_per_condition};
  out.write(kDatasetMagic, sizeof kDatasetMagic);
  out.write(reinterpret_cast<const char*>(head), sizeof head);
  auto put = [&out](const double* p, Eigen::Index n) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  };
  put(w.data.conditions.data(), w.data.conditions.size());
  put(w.data.targets.data(), w.data.targets.size());
  put(w.data.weights.data(), w.data.weights.size());
  out.close();
  if (!out) throw IoError("cannot write " + path.string());
}

/// Records and block size only; per-condition diagnostics live in their own CSV.
inline WeightedDataset read_weighted_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  std::int64_t head[5];
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(head), sizeof head);
  if (!in || !std::equal(magic, magic + 8, kDatasetMagic)) throw DataError(path.string() + ": not a weighted dataset file");
  if (head[0] != kReportVersion) throw DataError(path.string() + ": unsupported dataset version");
  if (head[1] < 0 || head[2] < 1 || head[3] < 0 || head[4] < 0) throw DataError(path.string() + ": corrupt header");
  WeightedDataset w;
  w.samples_per_condition = head[4];
  w.data.conditions.resize(head[1], head[3]);
  w.data.targets.resize(head[2], head[3]);
  w.data.weights.resize(head[3]);
  auto get = [&in](double* p, Eigen::Index n) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  };
  get(w.data.conditions.data(), w.data.conditions.size());
  get(w.data.targets.data(), w.data.targets.size());
  get(w.data.weights.data(), w.data.weights.size());
  if (!in) throw DataError(path.string() + ": truncated dataset file");
  return w;
}

// -- reports --------------------------------------------------------------------

inline nlohmann::json finite_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }

/// One block of drift statistics per instrument.
inline nlohmann::json drift_rows_json(const DriftReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& d : r.rows)
    rows.push_back({{"instrument", d.name},
                    {"price", d.price},
                    {"P drift", d.p_drift},
                    {"Q drift", d.q_drift},
                    {"P drift (%)", d.p_pct},
                    {"Q drift (%)", d.q_pct},
                    {"Ratio", finite_or_null(d.ratio)},
                    {"P drift standard error", d.p_se},
                    {"Q drift standard error", d.q_se},
                    {"P standard deviation", d.p_std},
                    {"Q standard deviation", d.q_std}});
  return rows;
}

inline nlohmann::json pnl_json(const PnlResult& p) {
  return {{"action", std::vector<double>(p.action.data(), p.action.data() + p.action.size())},
          {"expected_utility", p.expected_utility},
          {"certainty_equivalent", p.certainty_equivalent},
          {"newton_iterations", p.iterations}};
}

inline std::string format_pnl_scatter(const PnlResult& p) {
  std::string out = "spot_move,pnl\n";
  for (Eigen::Index i = 0; i < p.pnl.size(); ++i) out += fmt(p.spot_move[i]) + "," + fmt(p.pnl[i]) + "\n";
  return out;
}

inline std::string format_histogram(const Histogram& h) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) out += csv_row({h.edges[b], h.edges[b + 1], h.counts[b]});
  return out;
}

/// Long format: one (x, y, density) row per lattice node.
inline std::string format_kde(const Kde2& k) {
  std::string out = "x,y,density\n";
  for (Eigen::Index i = 0; i < k.xs.size(); ++i)
    for (Eigen::Index j = 0; j < k.ys.size(); ++j) out += csv_row({k.xs[i], k.ys[j], k.density(i, j)});
  return out;
}

/// Rows (stage, epoch, train, validation, best); the rows of `stage` replace
/// any earlier rows of that stage in `existing`.
inline std::string merge_training_curves(const std::string& existing, const std::string& stage, const FitReport& r) {
  std::vector<std::vector<std::string>> keep;
  if (!existing.empty()) {
    const CsvTable t = parse_csv(existing, "training_curves.csv");
    for (const auto& row : t.rows)
      if (row[0] != stage) keep.push_back(row);
  }
  for (std::size_t e = 0; e < r.train_loss.size(); ++e)
    keep.push_back({stage, std::to_string(e), fmt(r.train_loss[e]), fmt(r.validation_loss[e]), fmt(r.best_so_far[e])});
  static const std::map<std::string, int> order{{"codec", 0}, {"physical", 1}, {"risk_neutral", 2}};
  std::stable_sort(keep.begin(), keep.end(), [](const auto& a, const auto& b) {
    const auto ia = order.count(a[0]) ? order.at(a[0]) : 9, ib = order.count(b[0]) ? order.at(b[0]) : 9;
    return ia < ib;
  });
  std::string out = "stage,epoch,train_loss,validation_loss,best_validation_loss\n";
  for (const auto& row : keep) {
    for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + row[c];
    out += "\n";
  }
  return out;
}

inline std::string format_diagnostics(const WeightedDataset& w) {
  std::string out =
      "condition,converged,iterations,gradient_norm,max_reweighted_drift,mean_weight,min_weight,message\n";
  for (const auto& d : w.diagnostics) {
    std::string msg = d.message;
    for (char& ch : msg)
      if (ch == ',' || ch == '\n') ch = ';';
    out += std::to_string(d.condition) + "," + (d.converged ? "1" : "0") + "," + std::to_string(d.iterations) + "," +
           fmt(d.gradient_norm) + "," + fmt(d.max_reweighted_drift) + "," + fmt(d.mean_weight) + "," +
           fmt(d.min_weight) + "," + msg + "\n";
  }
  return out;
}

}  // namespace rnsim

#endif  // RNSIM_CLI_IO_HPP
