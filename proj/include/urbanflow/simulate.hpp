#pragma once

// Langevin model of city growth in log-population coordinates:
//   du_i/dt = v_i
//   dv_i/dt = F_i - gamma_i v_i,  F = R f (rows rescaled so cor[F_i, F_j] = Q_ij)
// with reflecting bounds log X0 <= u <= log XM, an optional finite-size noise
// term on the relative population, and an equivalent normal-mode scheme for
// uniform damping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "urbanflow/coupling.hpp"
#include "urbanflow/error.hpp"
#include "urbanflow/ingest.hpp"
#include "urbanflow/random.hpp"
#include "urbanflow/stats.hpp"

namespace urbanflow {

enum class Scheme { direct, normal_mode };

inline std::string_view to_string(Scheme s) { return s == Scheme::direct ? "direct" : "normal_mode"; }

inline Scheme scheme_from_string(std::string_view s) {
  if (s == "direct") return Scheme::direct;
  if (s == "normal_mode") return Scheme::normal_mode;
  throw ValidationError("unknown scheme '" + std::string(s) + "'");
}

struct SimConfig {
  std::size_t n = 100;
  double box_km = 250.0;
  std::vector<PlanarPoint> positions;  // empty: sampled uniformly in the box
  double v_f = 1e-5;                   // yr^-2
  std::vector<double> gamma{1.0 / 17.0};  // yr^-1, one value broadcasts
  double r0_km = 74.0;
  double x0 = 1.0;
  double xm = 1e4;
  double v_w = 0.0;  // finite-size noise variance
  double dt = 1.0;   // yr
  std::size_t steps = 1000;
  std::size_t burn_in = 0;
  std::size_t record_stride = 1;
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::direct;
  bool normalize_force_rows = true;
  // Initial populations are log-uniform on [init_x_lo, init_x_hi]; default [x0, xm].
  std::optional<double> init_x_lo;
  std::optional<double> init_x_hi;

  std::vector<double> gammas() const {
    return gamma.size() == 1 ? std::vector<double>(n, gamma.front()) : gamma;
  }
  bool uniform_gamma() const {
    return std::all_of(gamma.begin(), gamma.end(), [&](double g) { return g == gamma.front(); });
  }

  void validate() const {
    require(n >= 1, "config: n must be >= 1");
    require(box_km > 0.0, "config: L must be positive");
    require(positions.empty() || positions.size() == n, "config: positions count must equal n");
    require(v_f >= 0.0 && std::isfinite(v_f), "config: V_f must be >= 0");
    require(!gamma.empty() && (gamma.size() == 1 || gamma.size() == n), "config: gamma must have 1 or n entries");
    for (double g : gamma) require(g > 0.0 && std::isfinite(g), "config: gamma must be positive");
    require(r0_km > 0.0, "config: r0 must be positive");
    require(x0 > 0.0 && x0 < xm, "config: need 0 < X0 < XM");
    require(v_w >= 0.0, "config: V_w must be >= 0");
    require(dt > 0.0, "config: dt must be positive");
    require(record_stride >= 1, "config: stride must be >= 1");
    require(burn_in < steps, "config: burn_in must be < steps");
    const double lo = init_x_lo.value_or(x0), hi = init_x_hi.value_or(xm);
    require(lo >= x0 && hi <= xm && lo <= hi, "config: initial range must lie within [X0, XM]");
    require(scheme == Scheme::direct || uniform_gamma(),
            "config: normal_mode scheme requires uniform gamma (use the direct scheme)");
  }
};

inline nlohmann::json to_json(const SimConfig& c) {
  nlohmann::json j;
  j["n"] = c.n;
  j["L_km"] = c.box_km;
  j["positions"] = nlohmann::json::array();
  for (const auto& p : c.positions) j["positions"].push_back({p.x_km, p.y_km});
  j["V_f"] = c.v_f;
  j["gamma"] = c.gamma;
  j["r0_km"] = c.r0_km;
  j["X0"] = c.x0;
  j["XM"] = c.xm;
  j["V_w"] = c.v_w;
  j["dt"] = c.dt;
  j["steps"] = c.steps;
  j["burn_in"] = c.burn_in;
  j["record_stride"] = c.record_stride;
  j["seed"] = c.seed;
  j["scheme"] = std::string(to_string(c.scheme));
  j["normalize_force_rows"] = c.normalize_force_rows;
  j["init_x_lo"] = c.init_x_lo ? nlohmann::json(*c.init_x_lo) : nlohmann::json(nullptr);
  j["init_x_hi"] = c.init_x_hi ? nlohmann::json(*c.init_x_hi) : nlohmann::json(nullptr);
  return j;
}

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  try {
    c.n = j.at("n").get<std::size_t>();
    c.box_km = j.at("L_km").get<double>();
    for (const auto& p : j.value("positions", nlohmann::json::array()))
      c.positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    c.v_f = j.at("V_f").get<double>();
    c.gamma = j.at("gamma").get<std::vector<double>>();
    c.r0_km = j.at("r0_km").get<double>();
    c.x0 = j.at("X0").get<double>();
    c.xm = j.at("XM").get<double>();
    c.v_w = j.value("V_w", 0.0);
    c.dt = j.at("dt").get<double>();
    c.steps = j.at("steps").get<std::size_t>();
    c.burn_in = j.value("burn_in", std::size_t{0});
    c.record_stride = j.value("record_stride", std::size_t{1});
    c.seed = j.at("seed").get<std::uint64_t>();
    c.scheme = scheme_from_string(j.value("scheme", std::string("direct")));
    c.normalize_force_rows = j.value("normalize_force_rows", true);
    if (j.contains("init_x_lo") && !j["init_x_lo"].is_null()) c.init_x_lo = j["init_x_lo"].get<double>();
    if (j.contains("init_x_hi") && !j["init_x_hi"].is_null()) c.init_x_hi = j["init_x_hi"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

struct LogBounds {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

/// Mirrors an overshoot back inside [lo, hi] and reverses the velocity.
/// Returns true when a reflection happened.
inline bool apply_bounds(double& u, double& v, const LogBounds& b) {
  if (u >= b.lo && u <= b.hi) return false;
  const double mirrored = u > b.hi ? 2.0 * b.hi - u : 2.0 * b.lo - u;
  if (!(mirrored >= b.lo && mirrored <= b.hi))
    throw NumericError("apply_bounds: overshoot larger than the domain width (step too large)");
  u = mirrored;
  v = -v;
  return true;
}

struct SimState {
  Eigen::VectorXd u;  // log X
  Eigen::VectorXd v;
};

/// v <- v + (F - gamma v) dt, then u <- u + v dt, then reflect.
inline void step_direct(SimState& s, const Eigen::VectorXd& force, const Eigen::VectorXd& gamma, double dt,
                        const LogBounds& bounds) {
  s.v.array() += (force.array() - gamma.array() * s.v.array()) * dt;
  s.u += s.v * dt;
  for (Eigen::Index i = 0; i < s.u.size(); ++i) apply_bounds(s.u(i), s.v(i), bounds);
  if (!s.u.allFinite() || !s.v.allFinite()) throw NumericError("step_direct: non-finite state");
}

/// Finite-size kick on relative populations: x_i <- x_i + sqrt(x_i V_w dt) xi_i,
/// applied to X = exp(u) at fixed total, then mapped back to u and reflected.
inline void apply_finite_size(SimState& s, std::span<const double> unit_normals, double v_w, double dt,
                              const LogBounds& bounds) {
  if (v_w <= 0.0) return;
  const Eigen::VectorXd X = s.u.array().exp();
  const double total = X.sum();
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    const double dX = std::sqrt(total * X(i) * v_w * dt) * unit_normals[static_cast<std::size_t>(i)];
    const double next = X(i) + dX;
    s.u(i) = next > 0.0 ? std::log(next) : bounds.lo;
    apply_bounds(s.u(i), s.v(i), bounds);
  }
}

/// Mode coordinates u' = A u, v' = A v.
struct ModeState {
  Eigen::VectorXd u;
  Eigen::VectorXd v;
};

/// v' <- v' + (sqrt(eps) f' - gamma v') dt, u' <- u' + v' dt. The forces f'
/// are drawn directly in mode space.
inline void step_modes(ModeState& s, const Eigen::VectorXd& sqrt_eps, const Eigen::VectorXd& mode_forces,
                       double gamma, double dt) {
  s.v.array() += (sqrt_eps.array() * mode_forces.array() - gamma * s.v.array()) * dt;
  s.u += s.v * dt;
  if (!s.u.allFinite() || !s.v.allFinite()) throw NumericError("step_modes: non-finite state");
}

struct Trajectory {
  std::vector<std::string> ids;
  std::vector<PlanarPoint> positions;
  std::vector<std::size_t> steps;  // integration step of each record
  Eigen::MatrixXd u;               // n x records
  Eigen::MatrixXd v;
  std::size_t record_stride = 1;
  double dt = 1.0;
  std::uint64_t seed = 0;

  std::size_t records() const noexcept { return steps.size(); }
  std::size_t city_count() const noexcept { return ids.size(); }
};

inline std::vector<PlanarPoint> sample_positions(std::size_t n, double box_km, std::uint64_t seed) {
  const NormalStream rng(seed);
  std::vector<PlanarPoint> pts(n);
  for (std::size_t i = 0; i < n; ++i)
    pts[i] = {box_km * rng.uniform(0, Stream::position, 2 * i), box_km * rng.uniform(0, Stream::position, 2 * i + 1)};
  return pts;
}

inline std::vector<PlanarPoint> resolved_positions(const SimConfig& c) {
  return c.positions.empty() ? sample_positions(c.n, c.box_km, c.seed) : c.positions;
}

/// Rows of R rescaled to unit norm, so that R f has correlation Q and the
/// per-city variance of f.
inline Eigen::MatrixXd force_matrix(const Eigen::MatrixXd& R, bool normalize_rows) {
  if (!normalize_rows) return R;
  const Eigen::VectorXd inv = R.rowwise().norm().cwiseInverse();
  return inv.asDiagonal() * R;
}

inline Trajectory run(const SimConfig& config) {
  config.validate();
  const auto n = static_cast<Eigen::Index>(config.n);
  const NormalStream rng(config.seed);
  const LogBounds bounds{std::log(config.x0), std::log(config.xm)};

  Trajectory traj;
  traj.positions = resolved_positions(config);
  for (std::size_t i = 0; i < config.n; ++i) traj.ids.push_back("c" + std::to_string(i));
  traj.record_stride = config.record_stride;
  traj.dt = config.dt;
  traj.seed = config.seed;
  const std::size_t post = config.steps - config.burn_in;
  const std::size_t records = (post + config.record_stride - 1) / config.record_stride;
  traj.u.resize(n, static_cast<Eigen::Index>(records));
  traj.v.resize(n, static_cast<Eigen::Index>(records));
  traj.steps.reserve(records);

  const Eigen::MatrixXd R = build_R(traj.positions, config.r0_km);
  const Eigen::MatrixXd M = force_matrix(R, config.normalize_force_rows);
  const std::vector<double> gvec = config.gammas();
  const Eigen::VectorXd gamma = Eigen::Map<const Eigen::VectorXd>(gvec.data(), n);

  SimState s{Eigen::VectorXd(n), Eigen::VectorXd::Zero(n)};
  const double init_lo = std::log(config.init_x_lo.value_or(config.x0));
  const double init_hi = std::log(config.init_x_hi.value_or(config.xm));
  for (Eigen::Index i = 0; i < n; ++i)
    s.u(i) = init_lo + (init_hi - init_lo) * rng.uniform(0, Stream::initial_u, static_cast<std::uint64_t>(i));

  NormalModes modes;
  Eigen::VectorXd sqrt_eps;
  ModeState ms;
  if (config.scheme == Scheme::normal_mode) {
    const Eigen::MatrixXd Qn = config.normalize_force_rows ? build_Q(R) : Eigen::MatrixXd(R * R.transpose());
    modes = eigendecompose(Qn);
    sqrt_eps = modes.eigenvalues.cwiseMax(0.0).cwiseSqrt();
    ms = {modes.basis * s.u, modes.basis * s.v};
  }

  std::vector<double> kicks(config.n);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const auto f = generate_forces(rng, step, config.v_f, config.dt, config.n);
    const Eigen::Map<const Eigen::VectorXd> fv(f.data(), n);
    if (config.scheme == Scheme::direct) {
      step_direct(s, M * fv, gamma, config.dt, bounds);
    } else {
      step_modes(ms, sqrt_eps, fv, config.gamma.front(), config.dt);
      s.u.noalias() = modes.basis.transpose() * ms.u;
      s.v.noalias() = modes.basis.transpose() * ms.v;
      // Reflections act on city coordinates; push the (sparse) corrections back.
      for (Eigen::Index i = 0; i < n; ++i) {
        const double u0 = s.u(i), v0 = s.v(i);
        if (apply_bounds(s.u(i), s.v(i), bounds)) {
          ms.u += modes.basis.col(i) * (s.u(i) - u0);
          ms.v += modes.basis.col(i) * (s.v(i) - v0);
        }
      }
    }
    if (config.v_w > 0.0) {
      for (std::size_t i = 0; i < config.n; ++i) kicks[i] = rng.normal(step, Stream::finite_size, i);
      const Eigen::VectorXd before_u = s.u, before_v = s.v;
      apply_finite_size(s, kicks, config.v_w, config.dt, bounds);
      if (config.scheme == Scheme::normal_mode) {
        ms.u += modes.basis * (s.u - before_u);
        ms.v += modes.basis * (s.v - before_v);
      }
    }
    if (step > config.burn_in && (step - config.burn_in - 1) % config.record_stride == 0) {
      const auto col = static_cast<Eigen::Index>(traj.steps.size());
      traj.u.col(col) = s.u;
      traj.v.col(col) = s.v;
      traj.steps.push_back(step);
    }
  }
  return traj;
}

struct Histogram {
  std::vector<double> center;
  std::vector<double> density;  // integrates to 1 over the range
  double lo = 0.0;
  double hi = 0.0;
};

inline Histogram density_histogram(std::span<const double> xs, double lo, double hi, std::size_t bins) {
  Histogram h{{}, std::vector<double>(bins, 0.0), lo, hi};
  const double w = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) h.center.push_back(lo + (static_cast<double>(b) + 0.5) * w);
  std::size_t used = 0;
  for (double x : xs) {
    if (!(x >= lo && x <= hi)) continue;
    const auto b = std::min(bins - 1, static_cast<std::size_t>((x - lo) / w));
    h.density[b] += 1.0;
    ++used;
  }
  if (used > 0)
    for (double& d : h.density) d /= static_cast<double>(used) * w;
  return h;
}

struct EquilibriumOptions {
  std::size_t bins = 40;
  /// Record spacing between velocity samples, in units of 1/gamma.
  double velocity_spacing = 3.0;
  /// Record spacing between log-population samples, in units of the slowest
  /// relaxation time of a reflected diffusion, W^2 / (pi^2 D) with
  /// D = V_f / (2 gamma^2).
  double position_spacing = 1.0;
};

struct EquilibriumStats {
  double mean_v2 = 0.0;  // over cities and records
  double beta = 0.0;     // 2 gamma / V_f
  double target_v2 = 0.0;
  Histogram u_hist;
  Histogram udot_hist;
  stats::KsResult ks_u;     // vs uniform on [log X0, log XM]
  stats::KsResult ks_udot;  // vs N(0, 1/beta)
  std::size_t u_samples = 0;
  std::size_t udot_samples = 0;
};

inline EquilibriumStats equilibrium_stats(const Trajectory& traj, const SimConfig& config,
                                          const EquilibriumOptions& opt = {}) {
  require(traj.records() > 0, "equilibrium_stats: empty trajectory");
  EquilibriumStats es;
  es.mean_v2 = traj.v.array().square().mean();
  const double g = config.uniform_gamma() ? config.gamma.front() : stats::mean(config.gammas());
  es.beta = config.v_f > 0.0 ? 2.0 * g / config.v_f : std::numeric_limits<double>::infinity();
  es.target_v2 = config.v_f / (2.0 * g);

  const LogBounds b{std::log(config.x0), std::log(config.xm)};
  const double record_time = static_cast<double>(traj.record_stride) * traj.dt;
  auto spacing = [&](double time) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(time / record_time)));
  };

  std::vector<double> all_u(traj.u.data(), traj.u.data() + traj.u.size());
  std::vector<double> all_v(traj.v.data(), traj.v.data() + traj.v.size());
  es.u_hist = density_histogram(all_u, b.lo, b.hi, opt.bins);
  const double vsd = std::sqrt(std::max(es.target_v2, 1e-300));
  es.udot_hist = density_histogram(all_v, -5.0 * vsd, 5.0 * vsd, opt.bins);

  // Cities share the coupled modes, so a sampled record contributes one city
  // (cycling through them) rather than all of them.
  auto thinned = [&](const Eigen::MatrixXd& m, std::size_t gap) {
    std::vector<double> out;
    std::size_t city = 0;
    for (std::size_t r = 0; r < traj.records(); r += gap) {
      out.push_back(m(static_cast<Eigen::Index>(city), static_cast<Eigen::Index>(r)));
      city = (city + 1) % traj.city_count();
    }
    return out;
  };

  const double diffusion = config.v_f / (2.0 * g * g);
  const double relax = diffusion > 0.0 ? b.width() * b.width() / (std::numbers::pi * std::numbers::pi * diffusion)
                                       : std::numeric_limits<double>::infinity();
  const std::size_t u_gap = std::isfinite(relax) ? spacing(opt.position_spacing * relax) : traj.records();
  const auto u_samples = thinned(traj.u, u_gap);
  es.u_samples = u_samples.size();
  es.ks_u = stats::ks_test(u_samples, [&](double u) { return std::clamp((u - b.lo) / b.width(), 0.0, 1.0); });

  // Velocity samples, spaced by a few damping times.
  if (config.v_f > 0.0) {
    const auto v_samples = thinned(traj.v, spacing(opt.velocity_spacing / g));
    es.udot_samples = v_samples.size();
    es.ks_udot = stats::ks_test(v_samples, [&](double v) { return 0.5 * std::erfc(-v / (vsd * std::numbers::sqrt2)); });
  }
  return es;
}

/// Populations X = exp(u) at each record, as a census panel with planar
/// coordinates. Records must be one year apart.
inline CensusPanel simulated_census(const Trajectory& traj) {
  require(std::abs(static_cast<double>(traj.record_stride) * traj.dt - 1.0) < 1e-9,
          "simulated_panel: stride mismatch (records must be 1 year apart)");
  require(traj.records() >= 1, "simulated_panel: empty trajectory");
  std::vector<Municipality> cities;
  for (std::size_t i = 0; i < traj.city_count(); ++i) cities.push_back({traj.ids[i], traj.ids[i], traj.positions[i]});
  std::vector<int> years(traj.records());
  for (std::size_t t = 0; t < years.size(); ++t) years[t] = static_cast<int>(t + 1);
  return CensusPanel(std::move(years), std::move(cities), traj.u.array().exp().matrix());
}

inline RelativePanel simulated_panel(const Trajectory& traj) { return to_relative(simulated_census(traj)); }

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "step,city_id,u,v\n";
  os.precision(17);
  for (std::size_t r = 0; r < traj.records(); ++r)
    for (std::size_t i = 0; i < traj.city_count(); ++i)
      os << traj.steps[r] << ',' << traj.ids[i] << ',' << traj.u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r))
         << ',' << traj.v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) << '\n';
}

}  // namespace urbanflow
