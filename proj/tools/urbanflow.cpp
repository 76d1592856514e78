// urbanflow: census flow analysis and Langevin city-growth simulation.
//
//   urbanflow analyze  --municipalities m.csv --populations p.csv [--planar] --out-dir out
//   urbanflow simulate --n 100 --L 250 --vf 1e-5 --gamma 0.0588 --r0 74 --x0 1 --xm 1e4 --dt 1 --out-dir out
//   urbanflow modes    --r0 74 --k 4 (--municipalities m.csv --planar | --n 100 --L 250) --out-dir out
//   urbanflow loopback <simulate flags> --out-dir out
//
// Exit codes: 0 success, 2 validation error, 1 runtime error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

using namespace urbanflow;

struct SimFlags {
  std::size_t n = 100;
  double box_km = 250.0;
  double v_f = 1e-5;
  std::vector<double> gamma{1.0 / 17.0};
  double r0 = 74.0;
  double x0 = 1.0;
  double xm = 1e4;
  double v_w = 0.0;
  double dt = 1.0;
  std::size_t steps = 1000;
  std::size_t burn_in = 0;
  std::size_t stride = 1;
  std::string scheme = "direct";
  bool raw_rows = false;
  std::string config_file;

  void add_to(CLI::App* app, bool with_output_flags) {
    app->add_option("--config", config_file, "SimConfig JSON (e.g. a previous run's config.json); overrides other flags");
    app->add_option("--n", n, "number of cities");
    app->add_option("--L", box_km, "box side, km");
    app->add_option("--vf", v_f, "force variance V_f, 1/yr^2");
    app->add_option("--gamma", gamma, "damping, 1/yr (one value, or one per city)")->delimiter(',');
    app->add_option("--r0", r0, "coupling scale, km");
    app->add_option("--x0", x0, "lower population bound");
    app->add_option("--xm", xm, "upper population bound");
    app->add_option("--vw", v_w, "finite-size noise variance V_w");
    app->add_option("--dt", dt, "time step, yr");
    app->add_option("--steps", steps, "total integration steps");
    app->add_option("--burn-in", burn_in, "discarded leading steps");
    if (with_output_flags) app->add_option("--stride", stride, "record every k-th step");
    app->add_option("--scheme", scheme, "direct | normal_mode");
    app->add_flag("--raw-force-rows", raw_rows, "use R f without rescaling rows to unit variance");
  }

  SimConfig to_config(std::optional<std::uint64_t> seed) const {
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw ValidationError("cannot open config: " + config_file);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
      }
      if (seed) j["seed"] = *seed;
      return sim_config_from_json(j);
    }
    SimConfig c;
    c.n = n;
    c.box_km = box_km;
    c.v_f = v_f;
    c.gamma = gamma;
    c.r0_km = r0;
    c.x0 = x0;
    c.xm = xm;
    c.v_w = v_w;
    c.dt = dt;
    c.steps = steps;
    c.burn_in = burn_in;
    c.record_stride = stride;
    c.scheme = scheme_from_string(scheme);
    c.normalize_force_rows = !raw_rows;
    c.seed = seed.value();
    c.validate();
    return c;
  }
};

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Space-time correlations of urban population flows: analysis and Langevin simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", urbanflow::cli::kToolVersion);

  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool planar = false;
  app.add_option("--seed", seed, "64-bit seed for all randomness (generated and printed if absent)");
  app.add_option("--out-dir", out_dir, "directory for output files")->required();
  app.add_flag("--planar", planar, "municipality coordinates are x_km,y_km instead of lon,lat");

  auto* analyze = app.add_subcommand("analyze", "empirical statistics and fits from census files");
  analyze->fallthrough();
  std::string muni_file, pop_file;
  cli::AnalyzeOptions aopt;
  std::optional<double> fixed_alpha;
  analyze->add_option("--municipalities", muni_file, "municipalities CSV")->required()->check(CLI::ExistingFile);
  analyze->add_option("--populations", pop_file, "populations CSV (id,year,population)")->required()->check(CLI::ExistingFile);
  analyze->add_option("--min-x", aopt.min_x, "threshold on mean relative population for pair and lag analyses");
  analyze->add_option("--max-lag", aopt.max_lag, "largest lag for c(dt); 0 = T-1");
  analyze->add_option("--width-ln-r", aopt.width_ln_r, "distance bin width in ln r");
  analyze->add_option("--r-min", aopt.r_min_km, "distance window lower edge, km");
  analyze->add_option("--r-max", aopt.r_max_km, "distance window upper edge, km");
  analyze->add_option("--width-c", aopt.width_c, "correlation bin width of the rc histogram");
  analyze->add_option("--rc-ln-r-lo", aopt.rc_ln_r_lo, "rc histogram window, ln r lower edge");
  analyze->add_option("--rc-ln-r-hi", aopt.rc_ln_r_hi, "rc histogram window, ln r upper edge");
  analyze->add_option("--rc-smoothing", aopt.rc_smoothing, "moving-average width along ln r");
  analyze->add_option("--width-ln-x", aopt.width_ln_x, "population bin width for c(1) by population");
  analyze->add_option("--alpha", fixed_alpha, "freeze the Lorentzian exponent");

  auto* simulate = app.add_subcommand("simulate", "integrate the Langevin model");
  simulate->fallthrough();
  SimFlags sim;
  sim.add_to(simulate, true);
  bool no_traj = false;
  simulate->add_flag("--no-trajectory", no_traj, "skip trajectory.csv (digest still recorded)");

  auto* modes = app.add_subcommand("modes", "eigenvalues and eigenvector maps of the coupling");
  modes->fallthrough();
  std::string modes_muni;
  double modes_r0 = 74.0, modes_box = 250.0;
  std::size_t modes_k = 4, modes_n = 100;
  modes->add_option("--municipalities", modes_muni, "planar municipalities CSV (else sample positions)");
  modes->add_option("--r0", modes_r0, "coupling scale, km");
  modes->add_option("--k", modes_k, "number of modes to export");
  modes->add_option("--n", modes_n, "number of sampled positions");
  modes->add_option("--L", modes_box, "box side for sampled positions, km");

  auto* loopback = app.add_subcommand("loopback", "simulate, analyze, compare to configured parameters");
  loopback->fallthrough();
  SimFlags lb;
  lb.add_to(loopback, false);
  std::size_t lb_max_lag = 30;
  std::optional<double> lb_alpha = 2.0;
  loopback->add_option("--max-lag", lb_max_lag, "largest lag for the exponential fit");
  loopback->add_option("--alpha", lb_alpha, "frozen Lorentzian exponent");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const bool needs_seed = app.got_subcommand(simulate) || app.got_subcommand(loopback) ||
                            (app.got_subcommand(modes) && modes_muni.empty());
    if (needs_seed && !seed) {
      seed = fresh_seed();
      std::cout << "seed: " << *seed << '\n';
    }
    if (app.got_subcommand(analyze)) {
      aopt.fixed_alpha = fixed_alpha;
      const auto res = cli::cmd_analyze(muni_file, pop_file, planar, aopt, out_dir);
      for (const auto& n : res.notices) std::cerr << "notice: " << n << '\n';
      std::cout << cli::summary_json(res).dump(2) << '\n';
    } else if (app.got_subcommand(simulate)) {
      const auto config = sim.to_config(seed);
      const auto res = cli::cmd_simulate(config, out_dir, !no_traj);
      std::cout << "trajectory sha256: " << res.trajectory_digest << '\n'
                << cli::to_json(res.equilibrium).dump(2) << '\n';
    } else if (app.got_subcommand(modes)) {
      std::vector<std::string> ids;
      std::vector<PlanarPoint> positions;
      nlohmann::json inputs = nlohmann::json::array();
      if (!modes_muni.empty()) {
        require(planar, "modes: --municipalities requires --planar coordinates");
        const std::vector<std::vector<std::string>> header{{"id", "name", "x_km", "y_km"}};
        for (const auto& [line, f] : csv::read(modes_muni, header)) {
          ids.push_back(f[0]);
          positions.push_back({csv::to_double(f[2], modes_muni, line), csv::to_double(f[3], modes_muni, line)});
        }
        inputs.push_back({{"file", modes_muni}, {"sha256", cli::file_digest(modes_muni)}});
        seed.reset();
      } else {
        positions = sample_positions(modes_n, modes_box, *seed);
        for (std::size_t i = 0; i < modes_n; ++i) ids.push_back("c" + std::to_string(i));
      }
      const nlohmann::json params{{"r0_km", modes_r0}, {"k", modes_k}, {"n", positions.size()}, {"L_km", modes_box}};
      const auto res = cli::cmd_modes(ids, positions, modes_r0, modes_k, out_dir, params, inputs, seed);
      std::cout << "leading eigenvalues:";
      for (Eigen::Index k = 0; k < std::min<Eigen::Index>(res.modes.eigenvalues.size(), 8); ++k)
        std::cout << ' ' << res.modes.eigenvalues(k);
      std::cout << '\n';
    } else if (app.got_subcommand(loopback)) {
      const auto config = lb.to_config(seed);
      const auto rep = cli::cmd_loopback(config, lb_max_lag, lb_alpha, out_dir);
      std::cout << rep.json.dump(2) << '\n';
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
