#pragma once

// Census panels: loading, validation, relative populations and distances.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "urbanflow/error.hpp"

namespace urbanflow {

inline constexpr double kEarthRadiusKm = 6371.0;

struct GeoPoint {
  double lon_deg = 0.0;
  double lat_deg = 0.0;
};

struct PlanarPoint {
  double x_km = 0.0;
  double y_km = 0.0;
};

using Position = std::variant<GeoPoint, PlanarPoint>;

enum class Geometry { planar, spherical };

struct Municipality {
  std::string id;
  std::string name;
  Position position;
};

/// Absolute populations X_i(t), one row per municipality, one column per year.
class CensusPanel {
 public:
  CensusPanel(std::vector<int> years, std::vector<Municipality> municipalities,
              Eigen::MatrixXd population)
      : years_(std::move(years)),
        municipalities_(std::move(municipalities)),
        population_(std::move(population)) {
    validate();
  }

  const std::vector<int>& years() const noexcept { return years_; }
  const std::vector<Municipality>& municipalities() const noexcept { return municipalities_; }
  const Eigen::MatrixXd& population() const noexcept { return population_; }

  std::size_t city_count() const noexcept { return municipalities_.size(); }
  std::size_t year_count() const noexcept { return years_.size(); }

  /// N(t) for column `col` (0-based).
  double total(std::size_t col) const { return population_.col(static_cast<Eigen::Index>(col)).sum(); }

 private:
  void validate() const {
    require(!years_.empty(), "census panel has no years");
    require(!municipalities_.empty(), "census panel has no municipalities");
    for (std::size_t k = 1; k < years_.size(); ++k)
      require(years_[k] == years_[k - 1] + 1, "non-contiguous years");
    require(population_.rows() == static_cast<Eigen::Index>(municipalities_.size()) &&
                population_.cols() == static_cast<Eigen::Index>(years_.size()),
            "population matrix shape does not match panel");
    std::set<std::string_view> ids;
    for (const auto& m : municipalities_)
      require(ids.insert(m.id).second, "duplicate municipality id '" + m.id + "'");
    for (Eigen::Index i = 0; i < population_.rows(); ++i)
      for (Eigen::Index t = 0; t < population_.cols(); ++t)
        require(std::isfinite(population_(i, t)) && population_(i, t) >= 0.0,
                "negative or non-finite population for '" + municipalities_[static_cast<std::size_t>(i)].id + "'");
    for (std::size_t t = 0; t < years_.size(); ++t)
      require(total(t) > 0.0, "total population is zero in year " + std::to_string(years_[t]));
  }

  std::vector<int> years_;
  std::vector<Municipality> municipalities_;
  Eigen::MatrixXd population_;
};

/// Relative populations x_i(t) = X_i(t)/N(t) and annual changes
/// xdot_i(t) = x_i(t+1) - x_i(t). Column t of `x` is year index t+1.
struct RelativePanel {
  std::vector<std::string> ids;
  std::vector<int> years;
  Eigen::MatrixXd x;
  Eigen::MatrixXd xdot;

  std::size_t city_count() const noexcept { return static_cast<std::size_t>(x.rows()); }
  /// Number of change observations T.
  std::size_t change_count() const noexcept { return static_cast<std::size_t>(xdot.cols()); }

  /// Builds a panel from arbitrary shares without normalizing. Used for
  /// synthetic inputs that are not census-derived.
  static RelativePanel from_shares(Eigen::MatrixXd shares, std::vector<std::string> ids = {}) {
    require(shares.cols() >= 2, "relative panel needs at least two years");
    RelativePanel rel;
    if (ids.empty())
      for (Eigen::Index i = 0; i < shares.rows(); ++i) ids.push_back("c" + std::to_string(i));
    require(ids.size() == static_cast<std::size_t>(shares.rows()), "id count does not match rows");
    rel.ids = std::move(ids);
    for (Eigen::Index t = 0; t < shares.cols(); ++t) rel.years.push_back(static_cast<int>(t + 1));
    rel.xdot = shares.rightCols(shares.cols() - 1) - shares.leftCols(shares.cols() - 1);
    rel.x = std::move(shares);
    return rel;
  }
};

inline RelativePanel to_relative(const CensusPanel& panel) {
  const auto& X = panel.population();
  Eigen::MatrixXd x(X.rows(), X.cols());
  for (Eigen::Index t = 0; t < X.cols(); ++t) x.col(t) = X.col(t) / X.col(t).sum();
  std::vector<std::string> ids;
  ids.reserve(panel.city_count());
  for (const auto& m : panel.municipalities()) ids.push_back(m.id);
  RelativePanel rel;
  if (x.cols() >= 2) {
    rel = RelativePanel::from_shares(std::move(x), std::move(ids));
  } else {
    rel.ids = std::move(ids);
    rel.x = std::move(x);
    rel.xdot.resize(rel.x.rows(), 0);
  }
  rel.years = panel.years();
  return rel;
}

/// Keeps the listed rows, in the given order.
inline RelativePanel select_cities(const RelativePanel& rel, std::span<const std::size_t> rows) {
  RelativePanel out;
  out.years = rel.years;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), rel.x.cols());
  out.xdot.resize(static_cast<Eigen::Index>(rows.size()), rel.xdot.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    require(rows[k] < rel.city_count(), "select_cities: row out of range");
    const auto src = static_cast<Eigen::Index>(rows[k]);
    const auto dst = static_cast<Eigen::Index>(k);
    out.x.row(dst) = rel.x.row(src);
    out.xdot.row(dst) = rel.xdot.row(src);
    out.ids.push_back(rel.ids[rows[k]]);
  }
  return out;
}

struct DistanceMatrix {
  Eigen::MatrixXd r;
  Geometry geometry = Geometry::planar;
};

inline double great_circle_km(const GeoPoint& a, const GeoPoint& b) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double dlat = (b.lat_deg - a.lat_deg) * deg;
  const double dlon = (b.lon_deg - a.lon_deg) * deg;
  const double h = std::pow(std::sin(dlat / 2), 2) +
                   std::cos(a.lat_deg * deg) * std::cos(b.lat_deg * deg) * std::pow(std::sin(dlon / 2), 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

inline double planar_km(const PlanarPoint& a, const PlanarPoint& b) {
  return std::hypot(a.x_km - b.x_km, a.y_km - b.y_km);
}

inline DistanceMatrix distance_matrix(std::span<const Municipality> cities, Geometry geometry) {
  const auto n = static_cast<Eigen::Index>(cities.size());
  for (const auto& c : cities) {
    if (geometry == Geometry::spherical) {
      const auto* g = std::get_if<GeoPoint>(&c.position);
      require(g != nullptr, "mixed position kinds: '" + c.id + "' is not geographic");
      require(g->lat_deg >= -90.0 && g->lat_deg <= 90.0 && g->lon_deg >= -180.0 && g->lon_deg <= 180.0,
              "coordinates out of range for '" + c.id + "'");
    } else {
      require(std::holds_alternative<PlanarPoint>(c.position),
              "mixed position kinds: '" + c.id + "' is not planar");
    }
  }
  DistanceMatrix d{Eigen::MatrixXd::Zero(n, n), geometry};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto& a = cities[static_cast<std::size_t>(i)].position;
      const auto& b = cities[static_cast<std::size_t>(j)].position;
      const double r = geometry == Geometry::spherical
                           ? great_circle_km(std::get<GeoPoint>(a), std::get<GeoPoint>(b))
                           : planar_km(std::get<PlanarPoint>(a), std::get<PlanarPoint>(b));
      d.r(i, j) = d.r(j, i) = r;
    }
  }
  return d;
}

namespace csv {

/// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char ch = line[k];
    if (quoted) {
      if (ch == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        fields.back() += '"';
        ++k;
      } else if (ch == '"') {
        quoted = false;
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else if (ch != '\r') {
      fields.back() += ch;
    }
  }
  return fields;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

inline double to_double(const std::string& field, const std::string& file, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    throw ParseError(file, line, "not a number: '" + field + "'");
  }
  if (used != field.size() || !std::isfinite(v)) throw ParseError(file, line, "not a number: '" + field + "'");
  return v;
}

inline long long to_integer(const std::string& field, const std::string& file, std::size_t line) {
  const double v = to_double(field, file, line);
  if (v != std::floor(v)) throw ParseError(file, line, "not an integer: '" + field + "'");
  return static_cast<long long>(v);
}

/// Reads a CSV file, checks the header and returns the data rows with their
/// 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> read(
    const std::string& path, std::span<const std::vector<std::string>> accepted_headers,
    std::size_t* header_choice = nullptr) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split(line);
    for (auto& f : fields) f = trim(f);
    if (!have_header) {
      bool ok = false;
      for (std::size_t h = 0; h < accepted_headers.size() && !ok; ++h) {
        if (fields == accepted_headers[h]) {
          ok = true;
          if (header_choice) *header_choice = h;
        }
      }
      if (!ok) throw ParseError(path, lineno, "unexpected header");
      have_header = true;
      continue;
    }
    if (fields.size() != accepted_headers[header_choice ? *header_choice : 0].size())
      throw ParseError(path, lineno, "wrong number of fields");
    rows.emplace_back(lineno, std::move(fields));
  }
  if (!have_header) throw ValidationError("empty file: " + path);
  return rows;
}

}  // namespace csv

/// Loads `id,name,lon,lat` (spherical) or `id,name,x_km,y_km` (planar) plus
/// long-format `id,year,population`.
inline CensusPanel load_census(const std::string& municipality_file, const std::string& population_file,
                               Geometry geometry = Geometry::spherical) {
  const std::vector<std::vector<std::string>> muni_header{
      geometry == Geometry::spherical ? std::vector<std::string>{"id", "name", "lon", "lat"}
                                      : std::vector<std::string>{"id", "name", "x_km", "y_km"}};
  std::vector<Municipality> cities;
  std::unordered_map<std::string, std::size_t> index;
  for (auto& [lineno, f] : csv::read(municipality_file, muni_header)) {
    if (f[0].empty()) throw ParseError(municipality_file, lineno, "empty id");
    const double a = csv::to_double(f[2], municipality_file, lineno);
    const double b = csv::to_double(f[3], municipality_file, lineno);
    Position pos = PlanarPoint{a, b};
    if (geometry == Geometry::spherical) {
      if (b < -90.0 || b > 90.0 || a < -180.0 || a > 180.0)
        throw ParseError(municipality_file, lineno, "coordinates out of range");
      pos = GeoPoint{a, b};
    }
    if (!index.emplace(f[0], cities.size()).second)
      throw ParseError(municipality_file, lineno, "duplicate id '" + f[0] + "'");
    cities.push_back({f[0], f[1], pos});
  }
  require(!cities.empty(), "no municipalities in " + municipality_file);

  const std::vector<std::vector<std::string>> pop_header{{"id", "year", "population"}};
  std::map<int, std::vector<double>> by_year;
  std::map<int, std::vector<bool>> seen;
  for (auto& [lineno, f] : csv::read(population_file, pop_header)) {
    const auto it = index.find(f[0]);
    if (it == index.end()) throw ParseError(population_file, lineno, "unknown municipality id '" + f[0] + "'");
    const auto year = static_cast<int>(csv::to_integer(f[1], population_file, lineno));
    const double pop = csv::to_double(f[2], population_file, lineno);
    if (pop < 0.0) throw ParseError(population_file, lineno, "negative population");
    auto [col, fresh] = by_year.try_emplace(year, cities.size(), 0.0);
    auto& mask = seen.try_emplace(year, cities.size(), false).first->second;
    if (mask[it->second]) throw ParseError(population_file, lineno, "duplicate (id, year) row");
    mask[it->second] = true;
    col->second[it->second] = pop;
  }
  require(!by_year.empty(), "no population rows in " + population_file);

  std::vector<int> years;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(cities.size()), static_cast<Eigen::Index>(by_year.size()));
  Eigen::Index col = 0;
  for (const auto& [year, values] : by_year) {
    if (!years.empty() && year != years.back() + 1) throw ValidationError("non-contiguous years");
    const auto& mask = seen.at(year);
    for (std::size_t i = 0; i < cities.size(); ++i) {
      require(mask[i], "gap in year coverage: '" + cities[i].id + "' has no value for " + std::to_string(year));
      X(static_cast<Eigen::Index>(i), col) = values[i];
    }
    years.push_back(year);
    ++col;
  }
  return CensusPanel(std::move(years), std::move(cities), std::move(X));
}

}  // namespace urbanflow
