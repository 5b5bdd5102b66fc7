// rnsim: command line front end for the market simulator pipeline.
//
//   rnsim synth         --config c.json --out run/
//   rnsim fit-physical  --config c.json --out run/
//   rnsim remove-drift  --config c.json --out run/
//   rnsim fit-rn        --config c.json --out run/
//   rnsim evaluate      --config c.json --out run/
//   rnsim simulate      --config c.json --out run/
//
// Stages communicate through files in the --out directory.

#include <chrono>
#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rnsim/cli_stages.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "JSON configuration file (defaults when omitted)");
  sub->add_option("--out", f.out, "working directory for inputs and outputs");
  sub->add_option("--seed", f.seed, "master seed, overrides the config");
  sub->add_flag("--verbose,-v", f.verbose, "progress messages on stderr");
}

rnsim::StageContext make_context(const CommonFlags& f) {
  rnsim::StageContext ctx;
  ctx.config = f.config.empty() ? rnsim::validate_config("") : rnsim::load_config(f.config);
  if (f.seed) ctx.config.seed = *f.seed;
  ctx.out = f.out;
  ctx.log.verbose = f.verbose;
  return ctx;
}

int fail(rnsim::ExitCode code, const std::string& what) {
  std::cerr << "rnsim: error: " << what << "\n";
  return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spot and option market simulator"};
  app.require_subcommand(1);
  CommonFlags flags;

  using Stage = std::function<void(const rnsim::StageContext&)>;
  const std::map<std::string, std::pair<std::string, Stage>> stages = {
      {"synth", {"generate a synthetic market history", rnsim::stage_synth}},
      {"fit-physical", {"fit the autoencoder and the physical flow", rnsim::stage_fit_physical}},
      {"remove-drift", {"build the reweighted drift-free dataset", rnsim::stage_remove_drift}},
      {"fit-rn", {"fit the risk-neutral flow", rnsim::stage_fit_rn}},
      {"evaluate", {"drift and utility diagnostics", [](const auto& c) { rnsim::stage_evaluate(c); }}},
      {"simulate", {"simulate multi-step paths", [](const auto& c) { rnsim::stage_simulate(c); }}},
  };
  for (const auto& [name, s] : stages) add_common(app.add_subcommand(name, s.first), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(rnsim::ExitCode::usage);
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const rnsim::StageContext ctx = make_context(flags);
    const auto t0 = std::chrono::steady_clock::now();
    stages.at(name).second(ctx);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ctx.log.info(name + " finished in " + rnsim::fmt(secs) + " s");
  } catch (const rnsim::Error& e) {
    return fail(e.exit_code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(rnsim::ExitCode::data, e.what());
  } catch (const std::exception& e) {
    return fail(rnsim::ExitCode::internal, e.what());
  }
  return 0;
}
