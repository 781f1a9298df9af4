#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>

#include "hloco/sim.hpp"
#include "hloco/stability.hpp"

namespace {

using namespace hloco;

void print_report(const RunReport& r) {
  fmt::print("scenario          {}\n", r.scenario);
  fmt::print("mode              {}\n", to_string(r.mode));
  fmt::print("status            {}\n", r.success ? "ok" : "FAILED");
  if (!r.success) fmt::print("failure           {} (t = {:.3f} s)\n", r.failure, r.failure_time.value_or(0.0));
  fmt::print("events            {} ({} MPC solves)\n", r.events, r.mpc_solves);
  fmt::print("final LIP error   {:.3e}\n", r.final_error);
  fmt::print("final COM error   {:.4f} m\n", r.final_com_error);
  fmt::print("converged         {}\n", r.converged ? "yes" : "no");
  fmt::print("COP outside hull  {}\n", r.cop_outside_polygon);
  if (r.mode == RunMode::FullOrder) {
    fmt::print("low-level solves  {}\n", r.lowlevel_solves);
    if (r.lowlevel_iteration_percentiles.size() == 4)
      fmt::print("QP iterations     p50 {} p90 {} p99 {} max {}\n", r.lowlevel_iteration_percentiles[0],
                 r.lowlevel_iteration_percentiles[1], r.lowlevel_iteration_percentiles[2],
                 r.lowlevel_iteration_percentiles[3]);
    fmt::print("max |y|           {:.4f} (bound {:.4f})\n", r.max_output_norm, r.output_bound);
    fmt::print("max |omega|       {:.3e}\n", r.max_defect_norm);
    fmt::print("pyramid viol.     {} (max {:.2e})\n", r.pyramid_violations, r.max_pyramid_violation);
    fmt::print("domains w/o decay {} of {}\n", r.domains_without_decay, r.domains_completed);
  } else {
    fmt::print("cone violations   {}\n", r.cone_violations);
  }
  for (const auto& n : r.notes) fmt::print("note: {}\n", n);
  fmt::print("outputs in        {}\n", r.output_dir.string());
}

RunReport load_report(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return report_from_json(nlohmann::json::parse(in));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical quadruped locomotion: event-based MPC over a virtual-constraint controller"};
  app.require_subcommand(1);

  std::string file, out_dir, report_path, dir;
  long long seed = -1;
  bool verbose = false;

  auto* run = app.add_subcommand("run", "Run a scenario TOML");
  run->add_option("scenario", file, "Scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--out-dir", out_dir, "Override the output directory");
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_flag("-v,--verbose", verbose, "Progress and wall time on stderr");

  auto* list = app.add_subcommand("list", "List bundled scenarios");
  list->add_option("--dir", dir, "Scenario directory");

  auto* plot = app.add_subcommand("plotdata", "Write plot-ready .dat files from a run report");
  plot->add_option("report", report_path, "Path to report.json")->required()->check(CLI::ExistingFile);

  auto* certify = app.add_subcommand("certify", "Stability certificate of a scenario's planner");
  certify->add_option("scenario", file, "Scenario file")->required()->check(CLI::ExistingFile);
  double radius = 0.03;
  int points = 8;
  std::string json_out;
  certify->add_option("--radius", radius, "Grid radius around the initial state")->check(CLI::PositiveNumber);
  certify->add_option("--points", points, "Number of initial states")->check(CLI::PositiveNumber);
  certify->add_option("--json", json_out, "Write the full report as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      Scenario s = parse_scenario(file);
      if (!out_dir.empty()) s.output_dir = out_dir;
      if (seed >= 0) s.seed = static_cast<std::uint64_t>(seed);
      const RunReport r = run_scenario(s, RunOptions{verbose});
      print_report(r);
      return r.success ? 0 : 1;
    }
    if (*list) {
      const auto entries = list_scenarios(dir.empty() ? default_scenario_dir() : std::filesystem::path(dir));
      fmt::print("{:<28} {:<20} {:<10} {:<10} {}\n", "name", "mode", "direction", "contact", "description");
      for (const auto& e : entries)
        fmt::print("{:<28} {:<20} {:<10} {:<10} {}\n", e.name, to_string(e.mode), to_string(e.direction),
                   e.contact == ContactModelKind::Compliant ? "compliant" : "rigid", e.description);
      return 0;
    }
    if (*plot) {
      for (const auto& p : emit_plotdata(load_report(report_path))) fmt::print("{}\n", p.string());
      return 0;
    }
    if (*certify) {
      const Scenario s = parse_scenario(file);
      const GaitGraph graph = scenario_graph(s);
      const MpcSetup setup = scenario_mpc(s, graph, default_quadruped().total_mass());
      const LipStated x0 = equilibrium_state<double>(graph.initial_centroid());
      DecayOptions opts;
      opts.event_budget = s.events;
      opts.threshold = s.convergence_threshold;
      const DecayReport rep = certify_downsample_decay(setup, decay_grid(x0, radius, points, s.seed), opts);
      fmt::print("verdict           {}\n", to_string(rep.verdict));
      fmt::print("coverage          {}\n", rep.coverage());
      fmt::print("envelope          |x - x_f| <= {:.3g} * {:.4f}^m\n", rep.envelope_c, rep.envelope_rate);
      fmt::print("observed rho      {:.4f}\n", rep.observed_rho);
      for (std::size_t j = 0; j < rep.l_consts.values.size(); ++j)
        fmt::print("L_{}               {:.4f}\n", j, rep.l_consts.values[j]);
      fmt::print("inter-sample violations {}\n", rep.intersample_violations);
      if (!json_out.empty()) std::ofstream(json_out) << decay_report_to_json(rep).dump(2) << '\n';
      return rep.verdict == DecayVerdict::DecayObserved ? 0 : 1;
    }
  } catch (const ScenarioError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
