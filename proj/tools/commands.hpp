#pragma once

// Subcommand implementations for the urbanflow tool. Kept separate from
// main() so the test suite can drive them directly.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "urbanflow/urbanflow.hpp"

namespace urbanflow::cli {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int k = 0; k < len; ++k) os << std::hex << std::setw(2) << std::setfill('0') << int(md[k]);
  return os.str();
}

inline std::string file_digest(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

/// Collects written files for the run manifest.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  bool enabled() const { return !dir_.empty(); }
  const std::filesystem::path& dir() const { return dir_; }

  template <class Writer>
  void write(const std::string& name, Writer&& writer) {
    if (!enabled()) return;
    std::ostringstream os;
    writer(os);
    const std::string bytes = os.str();
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    out << bytes;
    files_.push_back({{"file", name}, {"sha256", sha256_hex(bytes)}});
  }

  void write_json(const std::string& name, const nlohmann::json& j) {
    write(name, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }

  const nlohmann::json& files() const { return files_; }

 private:
  std::filesystem::path dir_;
  nlohmann::json files_ = nlohmann::json::array();
};

inline void write_manifest(OutputSet& out, const std::string& command, const nlohmann::json& params,
                           const nlohmann::json& inputs, std::optional<std::uint64_t> seed) {
  nlohmann::json m;
  m["command"] = command;
  m["parameters"] = params;
  m["inputs"] = inputs;
  m["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  m["tool_version"] = kToolVersion;
  m["outputs"] = out.files();
  out.write_json("manifest.json", m);
}

struct AnalyzeOptions {
  double min_x = 4e-4;           // threshold on <x> for pairwise and lag analyses
  std::size_t max_lag = 0;       // 0: T - 1
  double width_ln_r = 0.1;
  double r_min_km = 5.0;
  double r_max_km = 1000.0;
  std::size_t curve_smoothing = 0;
  double width_c = 1.0 / 15.0;
  double rc_ln_r_lo = 1.7;
  double rc_ln_r_hi = 6.0;
  std::size_t rc_smoothing = 10;
  double width_ln_x = 0.25;
  double variance_width_ln_x = 0.5;
  std::optional<double> fixed_alpha;

  nlohmann::json to_json() const {
    return {{"min_x", min_x},
            {"max_lag", max_lag},
            {"width_ln_r", width_ln_r},
            {"r_min_km", r_min_km},
            {"r_max_km", r_max_km},
            {"curve_smoothing", curve_smoothing},
            {"width_c", width_c},
            {"rc_ln_r_lo", rc_ln_r_lo},
            {"rc_ln_r_hi", rc_ln_r_hi},
            {"rc_smoothing", rc_smoothing},
            {"width_ln_x", width_ln_x},
            {"variance_width_ln_x", variance_width_ln_x},
            {"fixed_alpha", fixed_alpha ? nlohmann::json(*fixed_alpha) : nlohmann::json(nullptr)}};
  }
};

struct AnalysisResult {
  std::optional<FitResult> variance_fit;
  std::optional<FitResult> lorentzian_fit;
  std::optional<FitResult> exponential_fit;
  std::vector<LagCorrelation> lags;
  BinnedCurve distance_curve;
  std::size_t retained_cities = 0;
  std::size_t pairs = 0;
  std::vector<std::string> notices;
};

/// Steps I-III on a relative panel: variance law, distance correlations,
/// lag correlations, rc histogram and population-resolved c(1).
inline AnalysisResult analyze_panel(const RelativePanel& rel, const DistanceMatrix& d, const AnalyzeOptions& opt,
                                    OutputSet& out) {
  AnalysisResult res;
  const auto moments = city_moments(rel);

  const auto scatter = variance_scatter(moments);
  out.write("variance_scatter.csv", [&](std::ostream& os) {
    os << "city_id,mean_x,var_over_mean\n";
    os.precision(17);
    for (std::size_t k = 0; k < scatter.points.size(); ++k)
      os << rel.ids[scatter.rows[k]] << ',' << scatter.points[k].mean_x << ',' << scatter.points[k].ratio << '\n';
  });
  if (scatter.excluded > 0) res.notices.push_back(std::to_string(scatter.excluded) + " cities with <x> = 0 excluded from the variance scatter");
  try {
    res.variance_fit = fit_variance_law(scatter.points, {true, opt.variance_width_ln_x});
    out.write_json("variance_fit.json", to_json(*res.variance_fit));
  } catch (const ValidationError& e) {
    res.notices.push_back(std::string("variance-law fit skipped: ") + e.what());
  }

  const auto pairs = pairwise_correlations(rel, d, opt.min_x);
  res.retained_cities = pairs.retained.size();
  res.pairs = pairs.records.size();
  if (pairs.records.empty()) throw ValidationError("no pairs retained (threshold excludes all cities)");
  if (pairs.dropped_pairs > 0) res.notices.push_back(std::to_string(pairs.dropped_pairs) + " pairs dropped: zero variance");
  out.write("correlations.csv", [&](std::ostream& os) {
    os << "id_i,id_j,r_km,c\n";
    os.precision(17);
    for (const auto& r : pairs.records) os << rel.ids[r.i] << ',' << rel.ids[r.j] << ',' << r.r_km << ',' << r.c << '\n';
  });

  try {
    res.distance_curve = bin_statistic(pairs.records, opt.width_ln_r, opt.r_min_km, opt.r_max_km, Statistic::median,
                                       opt.curve_smoothing);
    out.write("distance_curve.csv", [&](std::ostream& os) { write_curve_csv(os, res.distance_curve); });
    if (res.distance_curve.center.size() < 4) {
      res.notices.push_back("lorentzian fit skipped: fewer than 4 distance bins");
    } else {
      res.lorentzian_fit = fit_lorentzian(res.distance_curve, {opt.fixed_alpha});
      out.write_json("lorentzian_fit.json", to_json(*res.lorentzian_fit));
    }
  } catch (const ValidationError& e) {
    res.notices.push_back(std::string("distance curve skipped: ") + e.what());
  }

  try {
    const auto h = rc_histogram(pairs.records, opt.width_ln_r, opt.width_c, opt.rc_ln_r_lo, opt.rc_ln_r_hi, opt.rc_smoothing);
    out.write("rc_histogram.csv", [&](std::ostream& os) { write_rc_csv(os, h); });
  } catch (const ValidationError& e) {
    res.notices.push_back(std::string("rc histogram skipped: ") + e.what());
  }

  const auto major = select_cities(rel, pairs.retained);
  const std::size_t T = rel.change_count();
  const std::size_t max_lag = opt.max_lag == 0 ? T - 1 : std::min(opt.max_lag, T - 1);
  if (major.city_count() >= 2 && max_lag >= 1) {
    res.lags = lag_curve(major, max_lag);
    out.write("lag_curve.csv", [&](std::ostream& os) {
      os << "lag,c,stddev,used,dropped\n";
      os.precision(17);
      for (const auto& l : res.lags) os << l.lag << ',' << l.mean << ',' << l.stddev << ',' << l.used << ',' << l.dropped << '\n';
    });
    std::vector<double> lag_t, lag_c;
    for (const auto& l : res.lags)
      if (l.used > 0) {
        lag_t.push_back(static_cast<double>(l.lag));
        lag_c.push_back(l.mean);
      }
    try {
      res.exponential_fit = fit_exponential(lag_t, lag_c);
      out.write_json("exponential_fit.json", to_json(*res.exponential_fit));
    } catch (const ValidationError& e) {
      res.notices.push_back(std::string("exponential fit skipped: ") + e.what());
    }
  } else {
    res.notices.push_back("lag curve skipped: fewer than 2 retained cities or T < 2");
  }

  const auto by_pop = correlation_by_population(rel, opt.width_ln_x);
  out.write("correlation_by_population.csv", [&](std::ostream& os) { write_curve_csv(os, by_pop.curve); });
  if (by_pop.skipped_bins > 0) res.notices.push_back(std::to_string(by_pop.skipped_bins) + " population bins skipped (< 2 cities)");
  return res;
}

inline nlohmann::json summary_json(const AnalysisResult& r) {
  nlohmann::json j;
  j["retained_cities"] = r.retained_cities;
  j["pairs"] = r.pairs;
  j["notices"] = r.notices;
  if (r.variance_fit) j["variance_fit"] = to_json(*r.variance_fit);
  if (r.lorentzian_fit) j["lorentzian_fit"] = to_json(*r.lorentzian_fit);
  if (r.exponential_fit) j["exponential_fit"] = to_json(*r.exponential_fit);
  return j;
}

inline AnalysisResult cmd_analyze(const std::string& municipalities, const std::string& populations, bool planar,
                                  const AnalyzeOptions& opt, const std::filesystem::path& out_dir) {
  const Geometry geometry = planar ? Geometry::planar : Geometry::spherical;
  const auto panel = load_census(municipalities, populations, geometry);
  const auto rel = to_relative(panel);
  const auto d = distance_matrix(panel.municipalities(), geometry);
  OutputSet out(out_dir);
  auto res = analyze_panel(rel, d, opt, out);
  out.write_json("summary.json", summary_json(res));
  auto params = opt.to_json();
  params["planar"] = planar;
  write_manifest(out, "analyze", params,
                 {{{"file", municipalities}, {"sha256", file_digest(municipalities)}},
                  {{"file", populations}, {"sha256", file_digest(populations)}}},
                 std::nullopt);
  return res;
}

struct SimulateResult {
  Trajectory trajectory;
  EquilibriumStats equilibrium;
  std::string trajectory_digest;
};

inline void write_panel_files(OutputSet& out, const CensusPanel& panel) {
  out.write("sim_municipalities.csv", [&](std::ostream& os) {
    os << "id,name,x_km,y_km\n";
    os.precision(17);
    for (const auto& m : panel.municipalities()) {
      const auto& p = std::get<PlanarPoint>(m.position);
      os << m.id << ',' << m.name << ',' << p.x_km << ',' << p.y_km << '\n';
    }
  });
  out.write("sim_populations.csv", [&](std::ostream& os) {
    os << "id,year,population\n";
    os.precision(17);
    for (std::size_t i = 0; i < panel.city_count(); ++i)
      for (std::size_t t = 0; t < panel.year_count(); ++t)
        os << panel.municipalities()[i].id << ',' << panel.years()[t] << ','
           << panel.population()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) << '\n';
  });
}

inline nlohmann::json to_json(const EquilibriumStats& e) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"mean_v2", num(e.mean_v2)},
          {"target_v2", num(e.target_v2)},
          {"beta", num(e.beta)},
          {"ks_u", {{"statistic", e.ks_u.statistic}, {"n", e.ks_u.n}, {"p_value", e.ks_u.p_value}}},
          {"ks_udot", {{"statistic", e.ks_udot.statistic}, {"n", e.ks_udot.n}, {"p_value", e.ks_udot.p_value}}}};
}

inline SimulateResult cmd_simulate(const SimConfig& config, const std::filesystem::path& out_dir,
                                   bool write_trajectory = true) {
  config.validate();
  SimulateResult res{run(config), {}, {}};
  res.equilibrium = equilibrium_stats(res.trajectory, config);
  std::ostringstream traj_csv;
  write_trajectory_csv(traj_csv, res.trajectory);
  res.trajectory_digest = sha256_hex(traj_csv.str());

  OutputSet out(out_dir);
  out.write_json("config.json", to_json(config));
  if (write_trajectory) out.write("trajectory.csv", [&](std::ostream& os) { os << traj_csv.str(); });
  out.write_json("equilibrium.json", to_json(res.equilibrium));
  auto hist = [](const Histogram& h) {
    return [&h](std::ostream& os) {
      os << "bin_center,density\n";
      os.precision(17);
      for (std::size_t k = 0; k < h.center.size(); ++k) os << h.center[k] << ',' << h.density[k] << '\n';
    };
  };
  out.write("u_histogram.csv", hist(res.equilibrium.u_hist));
  out.write("udot_histogram.csv", hist(res.equilibrium.udot_hist));
  if (std::abs(static_cast<double>(config.record_stride) * config.dt - 1.0) < 1e-9)
    write_panel_files(out, simulated_census(res.trajectory));
  auto params = to_json(config);
  params["trajectory_sha256"] = res.trajectory_digest;
  write_manifest(out, "simulate", params, nlohmann::json::array(), config.seed);
  return res;
}

struct ModesResult {
  NormalModes modes;
  std::vector<std::string> ids;
  std::vector<PlanarPoint> positions;
};

inline ModesResult cmd_modes(std::vector<std::string> ids, std::vector<PlanarPoint> positions, double r0_km,
                             std::size_t k, const std::filesystem::path& out_dir, const nlohmann::json& params,
                             const nlohmann::json& inputs, std::optional<std::uint64_t> seed) {
  require(k >= 1, "modes: k must be >= 1");
  require(k <= positions.size(), "modes: k exceeds the number of cities");
  ModesResult res;
  res.modes = eigendecompose(build_Q(build_R(positions, r0_km)));
  OutputSet out(out_dir);
  out.write("eigenvalues.csv", [&](std::ostream& os) {
    os << "mode_index,eigenvalue\n";
    os.precision(17);
    for (Eigen::Index m = 0; m < res.modes.eigenvalues.size(); ++m) os << m + 1 << ',' << res.modes.eigenvalues(m) << '\n';
  });
  for (std::size_t m = 0; m < k; ++m)
    out.write("mode_" + std::to_string(m + 1) + ".csv",
              [&](std::ostream& os) { write_modes_csv(os, ids, positions, res.modes, m, 1); });
  write_manifest(out, "modes", params, inputs, seed);
  res.ids = std::move(ids);
  res.positions = std::move(positions);
  return res;
}

struct LoopbackReport {
  bool degenerate = false;
  std::optional<FitResult> exponential_fit;
  std::optional<FitResult> lorentzian_fit;
  nlohmann::json json;
};

inline double relative_error(double got, double want) { return std::abs(got - want) / std::abs(want); }

/// Simulate, convert to an annual panel, analyze with all cities retained and
/// compare recovered 1/gamma, r0, C0 to the configuration.
inline LoopbackReport cmd_loopback(SimConfig config, std::size_t max_lag, std::optional<double> fixed_alpha,
                                   const std::filesystem::path& out_dir) {
  const double per_year = 1.0 / config.dt;
  require(std::abs(per_year - std::round(per_year)) < 1e-9, "loopback: dt must divide one year");
  config.record_stride = static_cast<std::size_t>(std::llround(per_year));
  config.validate();
  require(config.uniform_gamma(), "loopback: compares against a single gamma; use uniform gamma");

  LoopbackReport rep;
  nlohmann::json j;
  j["configured"] = {{"tau", 1.0 / config.gamma.front()}, {"r0_km", config.r0_km}, {"C0", 1.0}};
  OutputSet out(out_dir);
  out.write_json("config.json", to_json(config));
  if (config.v_f == 0.0) {
    rep.degenerate = true;
    j["degenerate"] = true;
    j["notice"] = "V_f = 0: no growth-rate variance, correlations are undefined";
    rep.json = j;
    out.write_json("report.json", j);
    write_manifest(out, "loopback", to_json(config), nlohmann::json::array(), config.seed);
    return rep;
  }

  const auto traj = run(config);
  const auto rel = simulated_panel(traj);
  AnalyzeOptions opt;
  opt.min_x = 0.0;
  opt.max_lag = max_lag;
  opt.fixed_alpha = fixed_alpha;
  opt.rc_smoothing = 0;
  std::vector<Municipality> cities;
  for (std::size_t i = 0; i < traj.city_count(); ++i) cities.push_back({traj.ids[i], traj.ids[i], traj.positions[i]});
  const auto d = distance_matrix(cities, Geometry::planar);
  OutputSet analysis(out.enabled() ? out.dir() / "analysis" : std::filesystem::path{});
  const auto res = analyze_panel(rel, d, opt, analysis);

  j["degenerate"] = false;
  j["notices"] = res.notices;
  if (res.exponential_fit) {
    rep.exponential_fit = res.exponential_fit;
    const double g = res.exponential_fit->value("gamma");
    const double tau = 1.0 / g;
    j["recovered"]["tau"] = tau;
    j["recovered"]["tau_stderr"] = res.exponential_fit->stderr_of("gamma") / (g * g);
    j["relative_error"]["tau"] = relative_error(tau, 1.0 / config.gamma.front());
  }
  if (res.lorentzian_fit) {
    rep.lorentzian_fit = res.lorentzian_fit;
    j["recovered"]["r0_km"] = res.lorentzian_fit->value("r0");
    j["recovered"]["r0_stderr"] = res.lorentzian_fit->stderr_of("r0");
    j["recovered"]["C0"] = res.lorentzian_fit->value("C0");
    j["recovered"]["C0_stderr"] = res.lorentzian_fit->stderr_of("C0");
    j["relative_error"]["r0_km"] = relative_error(res.lorentzian_fit->value("r0"), config.r0_km);
    j["relative_error"]["C0"] = relative_error(res.lorentzian_fit->value("C0"), 1.0);
  }
  rep.json = j;
  out.write_json("report.json", j);
  auto params = to_json(config);
  params["max_lag"] = max_lag;
  params["fixed_alpha"] = fixed_alpha ? nlohmann::json(*fixed_alpha) : nlohmann::json(nullptr);
  write_manifest(out, "loopback", params, nlohmann::json::array(), config.seed);
  return rep;
}

}  // namespace urbanflow::cli
