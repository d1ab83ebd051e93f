// thmm: simulate, fit, blrt, decode, report.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "thmm/blrt.hpp"
#include "thmm/estimation.hpp"
#include "thmm/io.hpp"
#include "thmm/parallel.hpp"
#include "thmm/simulation.hpp"

#ifndef THMM_VERSION
#define THMM_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace thmm;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string input;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> starts;
};

io::RunConfig load(const Common& c) {
  io::RunConfig rc = c.config.empty() ? io::RunConfig{} : io::read_run_config(c.config);
  if (!c.input.empty()) rc.input = c.input;
  if (!c.out.empty()) rc.output_dir = c.out;
  if (c.starts) rc.fit.n_starts = *c.starts;
  std::optional<std::uint64_t> seed = c.seed ? c.seed : rc.seed;
  if (const auto env = env_seed()) seed = env;
  if (seed) {
    rc.seed = seed;
    rc.fit.seed = *seed;
    rc.scenario.seed = *seed;
    rc.blrt.seed = *seed;
  }
  if (c.threads) rc.threads = *c.threads;
  rc.threads = thread_count(rc.threads);
  rc.fit.validate();
  return rc;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw InvalidInput("cannot write '" + path.string() + "'");
  return f;
}

void write_json(const fs::path& path, const json& doc) { open_out(path) << doc.dump(2) << '\n'; }

io::Ingested ingest(const io::RunConfig& rc) {
  if (rc.input.empty()) throw InvalidInput("no input file (use --input or the config's \"input\")");
  return io::ingest_file(rc.input, rc.ingest);
}

io::Provenance provenance(const io::RunConfig& rc, const std::string& command) {
  return {rc.fit.seed, THMM_VERSION, command, io::to_json(rc.fit)};
}

int run_simulate(const Common& c, const std::string& scenario, std::optional<int> T, std::optional<int> reps,
                 const std::string& telemetry, double threshold_km) {
  auto rc = load(c);
  if (!telemetry.empty()) {
    io::SyntheticTelemetryConfig sc;
    sc.T = T.value_or(8000);
    sc.seed = rc.seed.value_or(1);
    sc.threshold_km = threshold_km;
    const auto syn = io::make_synthetic_telemetry(sc);
    auto f = open_out(telemetry);
    f << "track_id,timestamp,lat,lon,dist_shore_km,vessel_dist_km,land_between\n";
    for (const auto& r : syn.rows)
      f << r.track_id << ',' << r.timestamp << ',' << io::format_double(*r.lat) << ',' << io::format_double(*r.lon) << ','
        << io::format_double(r.dist_shore_km) << ',' << io::format_double(*r.vessel_dist_km) << ','
        << (*r.land_between ? "true" : "false") << '\n';
    std::cout << json{{"telemetry", telemetry}, {"rows", syn.rows.size()}, {"threshold_exposure", syn.threshold_exposure}}.dump()
              << '\n';
    return 0;
  }
  if (!scenario.empty()) rc.scenario.id = scenario;
  if (T) rc.scenario.T = *T;
  if (reps) rc.scenario.n_replicates = *reps;
  rc.scenario.validate();
  const auto m = run_scenario(rc.scenario, rc.fit, rc.threads);
  const std::string stem = rc.scenario.id + "_T" + std::to_string(rc.scenario.T);
  const fs::path dir(rc.output_dir);
  {
    auto f = open_out(dir / ("replicates_" + stem + ".csv"));
    io::write_replicates_csv(f, m);
  }
  {
    auto f = open_out(dir / ("metrics_" + stem + ".csv"));
    io::write_metrics_csv(f, m);
  }
  json summary{{"scenario", rc.scenario.id}, {"T", rc.scenario.T}, {"replicates_ok", m.n_ok}, {"replicates_failed", m.n_failed}};
  for (std::size_t k = 0; k < m.slots.size(); ++k)
    summary[m.slots[k].has_threshold ? "power" : "false_positive_rate"].push_back(m.slots[k].detection_rate);
  std::cout << summary.dump() << '\n';
  return 0;
}

int run_fit(const Common& c, const std::string& canonical) {
  const auto rc = load(c);
  const auto ing = ingest(rc);
  if (!canonical.empty()) {
    auto f = open_out(canonical);
    io::write_canonical_csv(f, ing.rows);
  }
  FitOptions opt = rc.fit;
  const auto fit = qreml_loop(ing.data, ing.spec, opt);
  const fs::path dir(rc.output_dir);
  write_json(dir / "fit.json", io::serialize_result(fit, provenance(rc, "fit")));
  Likelihood lik(ing.spec, ing.data);
  const auto states = lik.viterbi(fit.working, opt.target_b);
  {
    auto f = open_out(dir / "nu.csv");
    io::write_nu_csv(f, ing.data, fit.nu_series, states);
  }
  {
    auto f = open_out(dir / "thresholds.csv");
    io::write_threshold_csv(f, fit);
  }
  json summary{{"fit", (dir / "fit.json").string()}, {"lambda", fit.lambda_hat}, {"capped", fit.capped}, {"converged", fit.converged}};
  for (const auto& t : fit.thresholds_original) summary["thresholds"].push_back(t ? json(*t) : json(nullptr));
  std::cout << summary.dump() << '\n';
  return 0;
}

int run_blrt(const Common& c, std::optional<int> B, const std::vector<int>& null_slots, std::optional<double> alpha) {
  auto rc = load(c);
  if (B) rc.blrt.B = *B;
  if (!null_slots.empty()) rc.blrt.null_slots = null_slots;
  if (alpha) rc.blrt.alpha = *alpha;
  const auto ing = ingest(rc);
  const auto res = blrt(ing.data, ing.spec, rc.blrt, rc.fit, rc.threads);
  auto doc = io::to_json(res, rc.blrt);
  doc["provenance"] = {{"seed", rc.blrt.seed}, {"version", THMM_VERSION}, {"command", "blrt"}, {"options", io::to_json(rc.fit)}};
  write_json(fs::path(rc.output_dir) / "blrt.json", doc);
  std::cout << json{{"observed_lr", res.observed_lr}, {"p_value", res.p_value}, {"reject", res.reject}, {"n_failed", res.n_failed}}.dump()
            << '\n';
  return 0;
}

int run_decode(const Common& c, const std::string& fit_path) {
  const auto rc = load(c);
  const auto ing = ingest(rc);
  std::ifstream in(fit_path);
  if (!in) throw InvalidInput("cannot open fit result '" + fit_path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("fit result is not valid JSON: ") + e.what());
  }
  const auto fit = io::read_result(doc);
  if (io::to_json(fit.spec) != io::to_json(ing.spec)) throw InvalidInput("fit result does not match the ingested model structure");
  Likelihood lik(ing.spec, ing.data);
  const double b = fit.spec.sharpness;
  const auto states = lik.viterbi(fit.working, b);
  const auto nu = lik.nu_series(fit.working, b);
  const auto occ = state_occupancy(states, ing.spec.n_states);
  const fs::path dir(rc.output_dir);
  {
    auto f = open_out(dir / "states.csv");
    io::write_nu_csv(f, ing.data, nu, states);
  }
  {
    auto f = open_out(dir / "occupancy.csv");
    f << "state,occupancy\n";
    for (std::size_t i = 0; i < occ.size(); ++i) f << i + 1 << ',' << io::format_double(occ[i]) << '\n';
  }
  std::cout << json{{"occupancy", occ}}.dump() << '\n';
  return 0;
}

int run_report(const std::vector<std::string>& inputs, const std::string& out) {
  if (inputs.empty()) throw InvalidInput("report needs at least one replicates CSV");
  std::vector<ScenarioMetrics> all;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    for (auto& g : io::read_replicates_csv(in)) all.push_back(std::move(g));
  }
  std::ostringstream table;
  table << "scenario,T,replicates,slot,rate_kind,rate,beta_bias,beta_sd\n";
  for (const auto& m : all) {
    for (std::size_t k = 0; k < m.slots.size(); ++k) {
      const auto& s = m.slots[k];
      table << m.config.id << ',' << m.config.T << ',' << m.n_ok << ',' << k + 1 << ','
            << (s.has_threshold ? "power" : "false_positive_rate") << ',' << io::format_double(s.detection_rate) << ','
            << io::format_double(s.beta_bias) << ',' << io::format_double(s.beta_sd) << '\n';
    }
  }
  if (out.empty()) {
    std::cout << table.str();
  } else {
    open_out(out) << table.str();
  }
  return 0;
}

int fail(const std::string& kind, const std::string& message, int code, const json& extra = json::object()) {
  json e{{"error", kind}, {"message", message}};
  e.update(extra);
  std::cerr << e.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lasso-penalized threshold hidden Markov models"};
  app.set_version_flag("--version", THMM_VERSION);
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "RunConfig JSON file");
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--seed", common.seed, "Master seed (THMM_SEED overrides)");
    sub->add_option("--threads", common.threads, "Worker threads (THMM_THREADS overrides)");
    sub->add_option("--starts", common.starts, "Random starts per fit");
  };

  auto* sim = app.add_subcommand("simulate", "Run a simulation scenario and write replicate and metric CSVs");
  add_common(sim);
  std::string scenario, telemetry;
  std::optional<int> T, reps;
  double threshold_km = 10.0;
  sim->add_option("--scenario", scenario, "1a, 1b, 2a, 2b or 2c");
  sim->add_option("--T", T, "Series length");
  sim->add_option("--reps", reps, "Replicates");
  sim->add_option("--telemetry", telemetry, "Write one synthetic telemetry CSV here instead");
  sim->add_option("--threshold-km", threshold_km, "Vessel distance threshold of the synthetic track");

  auto* fit = app.add_subcommand("fit", "Fit the penalized THMM to telemetry");
  add_common(fit);
  fit->add_option("--input", common.input, "Telemetry CSV");
  std::string canonical;
  fit->add_option("--canonical", canonical, "Also write the canonical CSV here");

  auto* bl = app.add_subcommand("blrt", "Bootstrap likelihood-ratio test");
  add_common(bl);
  bl->add_option("--input", common.input, "Telemetry CSV");
  std::optional<int> B;
  std::vector<int> null_slots;
  std::optional<double> alpha;
  bl->add_option("--B", B, "Bootstrap replicates");
  bl->add_option("--null-slots", null_slots, "Zero-based slots fixed at zero under H0 (default all)")->delimiter(',');
  bl->add_option("--alpha", alpha, "Significance level");

  auto* dec = app.add_subcommand("decode", "Viterbi states and occupancy from a fit result");
  add_common(dec);
  dec->add_option("--input", common.input, "Telemetry CSV");
  std::string fit_path;
  dec->add_option("--fit", fit_path, "fit.json from the fit command")->required();

  auto* rep = app.add_subcommand("report", "Aggregate replicate CSVs into a summary table");
  std::vector<std::string> report_inputs;
  std::string report_out;
  rep->add_option("inputs", report_inputs, "Replicates CSVs")->required();
  rep->add_option("--out", report_out, "Summary CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*sim) return run_simulate(common, scenario, T, reps, telemetry, threshold_km);
    if (*fit) return run_fit(common, canonical);
    if (*bl) return run_blrt(common, B, null_slots, alpha);
    if (*dec) return run_decode(common, fit_path);
    if (*rep) return run_report(report_inputs, report_out);
  } catch (const io::IngestError& e) {
    json diags = json::array();
    for (const auto& d : e.diagnostics()) diags.push_back({{"line", d.line}, {"message", d.message}});
    return fail("ingest", e.what(), 2, {{"diagnostics", diags}});
  } catch (const InvalidInput& e) {
    return fail("invalid_input", e.what(), 2);
  } catch (const ConvergenceError& e) {
    return fail("convergence", e.what(), 3);
  } catch (const NumericalError& e) {
    return fail("numerical", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 1;
}
