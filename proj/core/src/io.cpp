#include "thmm/io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "thmm/distributions.hpp"
#include "thmm/parallel.hpp"

namespace thmm::io {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Comma-separated fields; double quotes protect commas, "" is a literal quote.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

bool is_absent(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

std::optional<double> parse_number(const std::string& s, const char* column, int line, std::vector<Diagnostic>& diag) {
  if (is_absent(s)) return std::nullopt;
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    diag.push_back({line, std::string(column) + ": not a number: '" + s + "'"});
    return std::nullopt;
  }
  return v;
}

std::optional<bool> parse_bool(const std::string& s, int line, std::vector<Diagnostic>& diag) {
  if (is_absent(s)) return std::nullopt;
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (l == "true" || l == "1" || l == "yes") return true;
  if (l == "false" || l == "0" || l == "no") return false;
  diag.push_back({line, "land_between: not a boolean: '" + s + "'"});
  return std::nullopt;
}

[[noreturn]] void reject(const std::string& what, std::vector<Diagnostic> diag) {
  std::ostringstream msg;
  msg << what << " (" << diag.size() << " problem" << (diag.size() == 1 ? "" : "s") << ")";
  for (std::size_t k = 0; k < std::min<std::size_t>(diag.size(), 5); ++k)
    msg << "; line " << diag[k].line << ": " << diag[k].message;
  throw IngestError(msg.str(), std::move(diag));
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double number_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

json log_vector(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (std::isinf(v[k]) && v[k] < 0) {
      a.push_back(nullptr);
    } else {
      a.push_back(v[k]);
    }
  }
  return a;
}

Eigen::VectorXd log_vector_from(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t k = 0; k < a.size(); ++k)
    v[static_cast<Eigen::Index>(k)] = a[k].is_null() ? -std::numeric_limits<double>::infinity() : a[k].get<double>();
  return v;
}

json vector_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from(const json& a) {
  const auto xs = a.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from(const json& rows, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(r.size()) != cols) throw InvalidInput("matrix row has wrong length");
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), c) = r[static_cast<std::size_t>(c)];
  }
  return m;
}

// --- config helpers --------------------------------------------------------

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw InvalidInput("config: " + where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw InvalidInput("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <class T>
void read_field(const json& obj, const char* key, const std::string& where, T& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  const std::string name = where.empty() ? key : where + "." + key;
  bool ok = false;
  if constexpr (std::is_same_v<T, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_integral_v<T>) {
    ok = v.is_number_integer() && (!std::is_unsigned_v<T> || v.get<long long>() >= 0);
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = v.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    ok = v.is_string();
  } else {
    ok = v.is_array();
  }
  if (!ok) throw InvalidInput("config: " + name + " has the wrong type");
  try {
    out = v.get<T>();
  } catch (const json::exception&) {
    throw InvalidInput("config: " + name + " has the wrong type");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

double haversine_km(double lat1, double lon1, double lat2, double lon2, double radius_km) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double p1 = lat1 * rad, p2 = lat2 * rad;
  const double dp = (lat2 - lat1) * rad, dl = (lon2 - lon1) * rad;
  const double a = std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * radius_km * std::asin(std::min(1.0, std::sqrt(a)));
}

double initial_bearing(double lat1, double lon1, double lat2, double lon2) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double p1 = lat1 * rad, p2 = lat2 * rad, dl = (lon2 - lon1) * rad;
  return std::atan2(std::sin(dl) * std::cos(p2), std::cos(p1) * std::sin(p2) - std::sin(p1) * std::cos(p2) * std::cos(dl));
}

double parse_utc_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, n = 0;
  double s = 0.0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%lf%n", &y, &mo, &d, &h, &mi, &s, &n) != 6)
    throw InvalidInput("timestamp not ISO-8601: '" + text + "'");
  const std::string zone = text.substr(static_cast<std::size_t>(n));
  if (!(zone.empty() || zone == "Z" || zone == "+00:00")) throw InvalidInput("timestamp not UTC: '" + text + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s < 0.0 || s >= 61.0) throw InvalidInput("timestamp out of range: '" + text + "'");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + s;
}

std::vector<TelemetryRow> read_telemetry_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty input", {{0, "no header row"}});
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < header.size(); ++k) col[header[k]] = k;
  std::vector<Diagnostic> diag;
  for (const char* required : {"track_id", "timestamp", "dist_shore_km"})
    if (!col.count(required)) diag.push_back({1, std::string("missing column '") + required + "'"});
  if (!diag.empty()) reject("bad header", std::move(diag));

  std::vector<TelemetryRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      diag.push_back({lineno, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size())});
      continue;
    }
    auto get = [&](const char* name) -> std::string {
      const auto it = col.find(name);
      return it == col.end() ? std::string() : f[it->second];
    };
    TelemetryRow r;
    r.line = lineno;
    r.track_id = get("track_id");
    r.timestamp = get("timestamp");
    if (r.track_id.empty()) diag.push_back({lineno, "track_id is empty"});
    r.lat = parse_number(get("lat"), "lat", lineno, diag);
    r.lon = parse_number(get("lon"), "lon", lineno, diag);
    r.step_km = parse_number(get("step_km"), "step_km", lineno, diag);
    r.turn_rad = parse_number(get("turn_rad"), "turn_rad", lineno, diag);
    r.max_depth_m = parse_number(get("max_depth_m"), "max_depth_m", lineno, diag);
    const auto shore = parse_number(get("dist_shore_km"), "dist_shore_km", lineno, diag);
    if (shore) {
      r.dist_shore_km = *shore;
    } else if (is_absent(get("dist_shore_km"))) {
      diag.push_back({lineno, "dist_shore_km is required"});
    }
    r.vessel_dist_km = parse_number(get("vessel_dist_km"), "vessel_dist_km", lineno, diag);
    r.land_between = parse_bool(get("land_between"), lineno, diag);
    rows.push_back(std::move(r));
  }
  if (!diag.empty()) reject("malformed telemetry CSV", std::move(diag));
  if (rows.empty()) throw IngestError("no data rows", {{0, "no data rows"}});
  return rows;
}

Ingested ingest_rows(const std::vector<TelemetryRow>& rows, const IngestConfig& config) {
  if (config.n_states < 1) throw InvalidInput("n_states must be at least 1");
  if (!(config.mask_distance_km > 0.0)) throw InvalidInput("mask_distance_km must be positive");
  if (config.cadence_seconds && !(*config.cadence_seconds > 0.0)) throw InvalidInput("cadence_seconds must be positive");
  std::vector<Diagnostic> diag;

  // Tracks in order of first appearance.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const TelemetryRow*>> groups;
  for (const auto& r : rows) {
    auto& g = groups[r.track_id];
    if (g.empty()) order.push_back(r.track_id);
    g.push_back(&r);
  }

  Ingested out;
  for (const auto& id : order) {
    const auto& g = groups[id];
    const int T = static_cast<int>(g.size());
    if (T < 2) diag.push_back({g[0]->line, "track '" + id + "' has fewer than two rows"});
    std::optional<double> cadence = config.cadence_seconds;
    double prev = kNaN;
    for (int t = 0; t < T; ++t) {
      const auto& r = *g[static_cast<std::size_t>(t)];
      double ts = kNaN;
      try {
        ts = parse_utc_timestamp(r.timestamp);
      } catch (const InvalidInput& e) {
        diag.push_back({r.line, e.what()});
        continue;
      }
      if (t > 0 && std::isfinite(prev)) {
        const double dt = ts - prev;
        if (!(dt > 0.0)) {
          diag.push_back({r.line, "timestamp not after the previous row of track '" + id + "'"});
        } else if (!cadence) {
          cadence = dt;
        } else if (std::abs(dt - *cadence) > 1e-6) {
          diag.push_back({r.line, "cadence " + format_double(dt) + " s differs from " + format_double(*cadence) + " s"});
        }
      }
      prev = ts;
      if (r.step_km && !(*r.step_km > 0.0)) diag.push_back({r.line, "step_km must be positive"});
      if (r.max_depth_m && !(*r.max_depth_m > 0.0)) diag.push_back({r.line, "max_depth_m must be positive"});
      if (r.dist_shore_km < 0.0) diag.push_back({r.line, "dist_shore_km is negative"});
      if (r.vessel_dist_km && !(*r.vessel_dist_km > 0.0)) diag.push_back({r.line, "vessel_dist_km must be positive"});
      if (r.lat && std::abs(*r.lat) > 90.0) diag.push_back({r.line, "lat outside [-90, 90]"});
      if (r.lon && std::abs(*r.lon) > 180.0) diag.push_back({r.line, "lon outside [-180, 180]"});
    }

    // Steps run forward from each fix; the angle at t turns from bearing (t-1, t) to (t, t+1).
    auto has_pos = [&](int t) { return g[static_cast<std::size_t>(t)]->lat && g[static_cast<std::size_t>(t)]->lon; };
    auto pos = [&](int t) { return std::pair{*g[static_cast<std::size_t>(t)]->lat, *g[static_cast<std::size_t>(t)]->lon}; };
    for (int t = 0; t < T; ++t) {
      TelemetryRow c = *g[static_cast<std::size_t>(t)];
      if (!c.step_km && t + 1 < T && has_pos(t) && has_pos(t + 1)) {
        const auto [a1, o1] = pos(t);
        const auto [a2, o2] = pos(t + 1);
        const double d = haversine_km(a1, o1, a2, o2);
        if (d > 0.0) {
          c.step_km = d;
        } else {
          diag.push_back({c.line, "zero step length to the next fix"});
        }
      }
      if (c.turn_rad) {
        c.turn_rad = wrap_angle(*c.turn_rad);
      } else if (t > 0 && t + 1 < T && has_pos(t - 1) && has_pos(t) && has_pos(t + 1) && pos(t - 1) != pos(t) &&
                 pos(t) != pos(t + 1)) {
        const auto [a0, o0] = pos(t - 1);
        const auto [a1, o1] = pos(t);
        const auto [a2, o2] = pos(t + 1);
        c.turn_rad = wrap_angle(initial_bearing(a1, o1, a2, o2) - initial_bearing(a0, o0, a1, o1));
      }
      c.lat.reset();
      c.lon.reset();
      out.rows.push_back(std::move(c));
    }
  }
  if (!diag.empty()) reject("telemetry rejected", std::move(diag));

  const bool any_angle = std::any_of(out.rows.begin(), out.rows.end(), [](const auto& r) { return r.turn_rad.has_value(); });
  const bool any_depth = std::any_of(out.rows.begin(), out.rows.end(), [](const auto& r) { return r.max_depth_m.has_value(); });
  auto& spec = out.spec;
  spec.n_states = config.n_states;
  spec.sharpness = config.sharpness;
  spec.streams.push_back({"step", Family::gamma, false});
  if (any_angle) spec.streams.push_back({"angle", Family::vonmises, config.estimate_angle_location});
  if (any_depth) spec.streams.push_back({"max_depth", Family::gamma, false});
  spec.tpm_covariates.push_back({"dist_shore", true});
  if (config.split_by_land) {
    spec.threshold_covariates = {"exposure_noland", "exposure_land"};
  } else {
    spec.threshold_covariates = {"exposure"};
  }
  const int p2 = spec.p2();

  // Exposure per slot, pooled over tracks for the standardization.
  const std::size_t n = out.rows.size();
  std::vector<std::vector<double>> raw(static_cast<std::size_t>(p2), std::vector<double>(n, 0.0));
  std::vector<std::vector<bool>> active(static_cast<std::size_t>(p2), std::vector<bool>(n, false));
  std::vector<bool> masked(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = out.rows[i];
    if (!r.vessel_dist_km || *r.vessel_dist_km > config.mask_distance_km) {
      masked[i] = true;
      continue;
    }
    const std::size_t slot = config.split_by_land && r.land_between.value_or(false) ? 1 : 0;
    raw[slot][i] = 1.0 / *r.vessel_dist_km;
    active[slot][i] = true;
  }
  std::vector<StandardizedCovariate> slots;
  for (int k = 0; k < p2; ++k) {
    try {
      slots.push_back(standardize_slot(raw[static_cast<std::size_t>(k)], active[static_cast<std::size_t>(k)]));
    } catch (const DegenerateCovariate& e) {
      throw DegenerateCovariate("slot '" + spec.threshold_covariates[static_cast<std::size_t>(k)] + "': " + e.what());
    }
    const auto& sk = slots.back();
    if (std::none_of(active[static_cast<std::size_t>(k)].begin(), active[static_cast<std::size_t>(k)].end(), [](bool a) { return a; }))
      throw DegenerateCovariate("slot '" + spec.threshold_covariates[static_cast<std::size_t>(k)] +
                                "' has no exposed steps within the mask distance");
    out.data.threshold_scaling.push_back({spec.threshold_covariates[static_cast<std::size_t>(k)], sk.orig_min, sk.orig_max});
  }

  std::size_t i = 0;
  for (const auto& id : order) {
    const int T = static_cast<int>(groups[id].size());
    Track tr;
    tr.id = id;
    tr.observations.resize(T, static_cast<Eigen::Index>(spec.streams.size()));
    tr.tpm_covariates.resize(T, 1);
    tr.threshold_covariates.resize(T, p2);
    tr.baseline_mask.assign(static_cast<std::size_t>(T), false);
    for (int t = 0; t < T; ++t, ++i) {
      const auto& r = out.rows[i];
      Eigen::Index s = 0;
      tr.observations(t, s++) = r.step_km.value_or(kNaN);
      if (any_angle) tr.observations(t, s++) = r.turn_rad.value_or(kNaN);
      if (any_depth) tr.observations(t, s++) = r.max_depth_m.value_or(kNaN);
      tr.tpm_covariates(t, 0) = r.dist_shore_km;
      for (int k = 0; k < p2; ++k) tr.threshold_covariates(t, k) = slots[static_cast<std::size_t>(k)].values[i];
      tr.baseline_mask[static_cast<std::size_t>(t)] = masked[i];
    }
    out.data.tracks.push_back(std::move(tr));
  }
  spec.validate();
  out.data.validate(spec);
  return out;
}

Ingested ingest_tracks(std::istream& in, const IngestConfig& config) { return ingest_rows(read_telemetry_csv(in), config); }

Ingested ingest_file(const std::string& path, const IngestConfig& config) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  return ingest_tracks(in, config);
}

std::string format_double(double x) {
  if (std::isnan(x)) return "NA";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

void write_canonical_csv(std::ostream& out, const std::vector<TelemetryRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  out << "track_id,timestamp,step_km,turn_rad,max_depth_m,dist_shore_km,vessel_dist_km,land_between\n";
  for (const auto& r : rows) {
    out << r.track_id << ',' << r.timestamp << ',' << opt(r.step_km) << ',' << opt(r.turn_rad) << ','
        << opt(r.max_depth_m) << ',' << format_double(r.dist_shore_km) << ',' << opt(r.vessel_dist_km) << ','
        << (r.land_between ? (*r.land_between ? "true" : "false") : "") << '\n';
  }
}

// --- configuration ---------------------------------------------------------

json to_json(const FitOptions& o) {
  return {{"n_starts", o.n_starts},
          {"sharpness_schedule", o.sharpness_schedule},
          {"target_b", o.target_b},
          {"epsilon_sep", o.epsilon_sep},
          {"separation_weight", o.separation_weight},
          {"qreml_tol", o.qreml_tol},
          {"qreml_max_iter", o.qreml_max_iter},
          {"lambda_max", o.lambda_max},
          {"inner_opt_tol", o.inner_opt_tol},
          {"inner_max_iter", o.inner_max_iter},
          {"fd_step", o.fd_step},
          {"hessian_jitter", o.hessian_jitter},
          {"start_sigma", o.start_sigma},
          {"detection_threshold", o.detection_threshold},
          {"seed", o.seed}};
}

RunConfig parse_run_config(const json& doc) {
  check_keys(doc, "", {"seed", "threads", "input", "output_dir", "model", "ingest", "fit", "scenario", "blrt"});
  RunConfig c;
  std::uint64_t seed = 0;
  if (doc.contains("seed")) {
    read_field(doc, "seed", "", seed);
    c.seed = seed;
  }
  read_field(doc, "threads", "", c.threads);
  read_field(doc, "input", "", c.input);
  read_field(doc, "output_dir", "", c.output_dir);
  if (c.threads < 1) throw InvalidInput("config: threads must be at least 1");

  if (doc.contains("model")) {
    const auto& m = doc["model"];
    check_keys(m, "model", {"n_states", "sharpness", "estimate_angle_location"});
    read_field(m, "n_states", "model", c.ingest.n_states);
    read_field(m, "sharpness", "model", c.ingest.sharpness);
    read_field(m, "estimate_angle_location", "model", c.ingest.estimate_angle_location);
    if (c.ingest.n_states < 1) throw InvalidInput("config: model.n_states must be at least 1");
  }
  if (doc.contains("ingest")) {
    const auto& m = doc["ingest"];
    check_keys(m, "ingest", {"cadence_seconds", "mask_distance_km", "split_by_land"});
    if (m.contains("cadence_seconds")) {
      double cad = 0.0;
      read_field(m, "cadence_seconds", "ingest", cad);
      if (!(cad > 0.0)) throw InvalidInput("config: ingest.cadence_seconds must be positive");
      c.ingest.cadence_seconds = cad;
    }
    read_field(m, "mask_distance_km", "ingest", c.ingest.mask_distance_km);
    read_field(m, "split_by_land", "ingest", c.ingest.split_by_land);
    if (!(c.ingest.mask_distance_km > 0.0)) throw InvalidInput("config: ingest.mask_distance_km must be positive");
  }
  if (doc.contains("fit")) {
    const auto& f = doc["fit"];
    check_keys(f, "fit",
               {"n_starts", "sharpness_schedule", "target_b", "epsilon_sep", "separation_weight", "qreml_tol",
                "qreml_max_iter", "lambda_max", "inner_opt_tol", "inner_max_iter", "fd_step", "hessian_jitter",
                "start_sigma", "detection_threshold", "seed"});
    auto& o = c.fit;
    read_field(f, "n_starts", "fit", o.n_starts);
    read_field(f, "sharpness_schedule", "fit", o.sharpness_schedule);
    read_field(f, "target_b", "fit", o.target_b);
    read_field(f, "epsilon_sep", "fit", o.epsilon_sep);
    read_field(f, "separation_weight", "fit", o.separation_weight);
    read_field(f, "qreml_tol", "fit", o.qreml_tol);
    read_field(f, "qreml_max_iter", "fit", o.qreml_max_iter);
    read_field(f, "lambda_max", "fit", o.lambda_max);
    read_field(f, "inner_opt_tol", "fit", o.inner_opt_tol);
    read_field(f, "inner_max_iter", "fit", o.inner_max_iter);
    read_field(f, "fd_step", "fit", o.fd_step);
    read_field(f, "hessian_jitter", "fit", o.hessian_jitter);
    read_field(f, "start_sigma", "fit", o.start_sigma);
    read_field(f, "detection_threshold", "fit", o.detection_threshold);
    read_field(f, "seed", "fit", o.seed);
  }
  if (doc.contains("scenario")) {
    const auto& s = doc["scenario"];
    check_keys(s, "scenario", {"id", "T", "replicates", "seed"});
    read_field(s, "id", "scenario", c.scenario.id);
    read_field(s, "T", "scenario", c.scenario.T);
    read_field(s, "replicates", "scenario", c.scenario.n_replicates);
    read_field(s, "seed", "scenario", c.scenario.seed);
    c.scenario.validate();
  }
  if (doc.contains("blrt")) {
    const auto& b = doc["blrt"];
    check_keys(b, "blrt", {"B", "null_slots", "alpha", "seed"});
    read_field(b, "B", "blrt", c.blrt.B);
    read_field(b, "null_slots", "blrt", c.blrt.null_slots);
    read_field(b, "alpha", "blrt", c.blrt.alpha);
    read_field(b, "seed", "blrt", c.blrt.seed);
    if (c.blrt.B < 1) throw InvalidInput("config: blrt.B must be at least 1");
    if (!(c.blrt.alpha > 0.0 && c.blrt.alpha < 1.0)) throw InvalidInput("config: blrt.alpha must lie in (0, 1)");
  }
  if (c.seed) {
    if (!doc.contains("fit") || !doc["fit"].contains("seed")) c.fit.seed = *c.seed;
    if (!doc.contains("scenario") || !doc["scenario"].contains("seed")) c.scenario.seed = *c.seed;
    if (!doc.contains("blrt") || !doc["blrt"].contains("seed")) c.blrt.seed = *c.seed;
  }
  c.fit.validate();
  return c;
}

RunConfig read_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(doc);
}

// --- results ---------------------------------------------------------------

json to_json(const ModelSpec& spec) {
  json streams = json::array();
  for (const auto& s : spec.streams)
    streams.push_back({{"name", s.name}, {"family", to_string(s.family)}, {"estimate_location", s.estimate_location}});
  json tpm = json::array();
  for (const auto& c : spec.tpm_covariates) tpm.push_back({{"name", c.name}, {"shared", c.shared}});
  return {{"n_states", spec.n_states},
          {"streams", streams},
          {"tpm_covariates", tpm},
          {"threshold_covariates", spec.threshold_covariates},
          {"sharpness", spec.sharpness}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.n_states = j.at("n_states").get<int>();
  for (const auto& st : j.at("streams"))
    s.streams.push_back({st.at("name").get<std::string>(), family_from_string(st.at("family").get<std::string>()),
                         st.at("estimate_location").get<bool>()});
  for (const auto& c : j.at("tpm_covariates")) s.tpm_covariates.push_back({c.at("name").get<std::string>(), c.at("shared").get<bool>()});
  s.threshold_covariates = j.at("threshold_covariates").get<std::vector<std::string>>();
  s.sharpness = j.at("sharpness").get<double>();
  s.validate();
  return s;
}

json to_json(const ThetaParams& theta, const ModelSpec& spec) {
  json em = json::array();
  for (const auto& row : theta.emissions) {
    json r = json::array();
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (spec.streams[k].family == Family::gamma) {
        const auto& g = as_gamma(row[k]);
        r.push_back({{"mean", g.mean}, {"shape", g.shape}});
      } else {
        const auto& v = as_vonmises(row[k]);
        r.push_back({{"location", v.location}, {"concentration", v.concentration}});
      }
    }
    em.push_back(r);
  }
  return {{"emissions", em},
          {"coefficients", {{"baseline", matrix_json(theta.coeffs.baseline.alpha)}, {"disturbed", matrix_json(theta.coeffs.disturbed.alpha)}}},
          {"delta_baseline", vector_json(theta.delta_baseline)},
          {"delta_disturbed", vector_json(theta.delta_disturbed)}};
}

ThetaParams theta_from_json(const json& j, const ModelSpec& spec) {
  ThetaParams th;
  for (const auto& r : j.at("emissions")) {
    std::vector<StreamParams> row;
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (k >= spec.streams.size()) throw InvalidInput("emission row longer than the stream list");
      if (spec.streams[k].family == Family::gamma) {
        row.emplace_back(GammaParams{r[k].at("mean").get<double>(), r[k].at("shape").get<double>()});
      } else {
        row.emplace_back(VonMisesParams{r[k].at("location").get<double>(), r[k].at("concentration").get<double>()});
      }
    }
    th.emissions.push_back(std::move(row));
  }
  const Eigen::Index cols = spec.n_tpm_covariates() + 1;
  th.coeffs.baseline = TransitionCoefficients::zeros(spec.n_states, spec.n_tpm_covariates());
  th.coeffs.disturbed = TransitionCoefficients::zeros(spec.n_states, spec.n_tpm_covariates());
  th.coeffs.baseline.alpha = matrix_from(j.at("coefficients").at("baseline"), cols);
  th.coeffs.disturbed.alpha = matrix_from(j.at("coefficients").at("disturbed"), cols);
  th.delta_baseline = vector_from(j.at("delta_baseline"));
  th.delta_disturbed = vector_from(j.at("delta_disturbed"));
  th.validate(spec);
  return th;
}

json serialize_result(const FitResult& r, const Provenance& p) {
  json thresholds = json::array();
  const Eigen::VectorXd beta = r.beta0_hat.values();
  for (int k = 0; k < r.spec.p2(); ++k) {
    const auto ks = static_cast<std::size_t>(k);
    json t;
    t["covariate"] = r.spec.threshold_covariates[ks];
    t["beta0"] = beta[k];
    t["orig_min"] = ks < r.threshold_scaling.size() ? json(r.threshold_scaling[ks].orig_min) : json(nullptr);
    t["orig_max"] = ks < r.threshold_scaling.size() ? json(r.threshold_scaling[ks].orig_max) : json(nullptr);
    t["threshold"] = ks < r.thresholds_original.size() && r.thresholds_original[ks] ? json(*r.thresholds_original[ks]) : json(nullptr);
    t["detected"] = ks < r.disturbance_detected.size() && r.disturbance_detected[ks];
    thresholds.push_back(t);
  }
  json trace = json::array();
  for (const auto& s : r.trace)
    trace.push_back({{"lambda", s.lambda}, {"beta_sum", s.beta_sum}, {"loglik", number_or_null(s.loglik)},
                     {"marginal_loglik", number_or_null(s.marginal_loglik)}});
  json doc;
  doc["schema_version"] = kFitSchema;
  doc["provenance"] = {{"seed", p.seed}, {"version", p.version}, {"command", p.command}, {"options", p.options}};
  doc["spec"] = to_json(r.spec);
  doc["theta"] = to_json(r.theta_hat, r.spec);
  doc["log_beta0"] = log_vector(r.beta0_hat.log_values);
  doc["thresholds"] = thresholds;
  doc["lambda"] = r.lambda_hat;
  doc["capped"] = r.capped;
  doc["converged"] = r.converged;
  doc["qreml_iterations"] = r.qreml_iterations;
  doc["loglik"] = number_or_null(r.loglik);
  doc["null_loglik"] = number_or_null(r.null_loglik);
  doc["marginal_loglik"] = number_or_null(r.marginal_loglik);
  doc["hessian_logdet"] = number_or_null(r.hessian_logdet);
  doc["hessian_jitter"] = number_or_null(r.hessian_jitter);
  doc["inner_gradient_norm"] = number_or_null(r.inner_gradient_norm);
  doc["working"] = log_vector(r.working);
  doc["trace"] = trace;
  return doc;
}

FitResult read_result(const json& doc, Provenance* provenance) {
  if (!doc.is_object() || doc.value("schema_version", std::string()) != kFitSchema)
    throw InvalidInput(std::string("not a fit result (expected schema ") + kFitSchema + ")");
  try {
    FitResult r;
    r.spec = spec_from_json(doc.at("spec"));
    r.theta_hat = theta_from_json(doc.at("theta"), r.spec);
    r.beta0_hat.log_values = log_vector_from(doc.at("log_beta0"));
    if (r.beta0_hat.size() != r.spec.p2()) throw InvalidInput("log_beta0 length does not match the spec");
    for (const auto& t : doc.at("thresholds")) {
      r.threshold_scaling.push_back({t.at("covariate").get<std::string>(), number_from(t.at("orig_min")), number_from(t.at("orig_max"))});
      r.thresholds_original.push_back(t.at("threshold").is_null() ? std::nullopt : std::optional<double>(t.at("threshold").get<double>()));
      r.disturbance_detected.push_back(t.at("detected").get<bool>());
    }
    r.lambda_hat = doc.at("lambda").get<double>();
    r.capped = doc.at("capped").get<bool>();
    r.converged = doc.at("converged").get<bool>();
    r.qreml_iterations = doc.at("qreml_iterations").get<int>();
    r.loglik = number_from(doc.at("loglik"));
    r.null_loglik = number_from(doc.at("null_loglik"));
    r.marginal_loglik = number_from(doc.at("marginal_loglik"));
    r.hessian_logdet = number_from(doc.at("hessian_logdet"));
    r.hessian_jitter = number_from(doc.at("hessian_jitter"));
    r.inner_gradient_norm = number_from(doc.at("inner_gradient_norm"));
    r.working = log_vector_from(doc.at("working"));
    for (const auto& s : doc.at("trace"))
      r.trace.push_back({s.at("lambda").get<double>(), s.at("beta_sum").get<double>(), number_from(s.at("loglik")),
                         number_from(s.at("marginal_loglik"))});
    if (provenance) {
      const auto& p = doc.at("provenance");
      provenance->seed = p.at("seed").get<std::uint64_t>();
      provenance->version = p.at("version").get<std::string>();
      provenance->command = p.at("command").get<std::string>();
      provenance->options = p.at("options");
    }
    return r;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed fit result: ") + e.what());
  }
}

json to_json(const BlrtResult& r, const BlrtConfig& c) {
  return {{"schema_version", "thmm.blrt/1"},
          {"B", c.B},
          {"alpha", c.alpha},
          {"seed", c.seed},
          {"null_slots", c.null_slots},
          {"null_loglik", number_or_null(r.null_loglik)},
          {"alt_loglik", number_or_null(r.alt_loglik)},
          {"observed_lr", r.observed_lr},
          {"bootstrap_lrs", r.bootstrap_lrs},
          {"n_failed", r.n_failed},
          {"failures", r.failures},
          {"p_value", r.p_value},
          {"reject", r.reject}};
}

void write_nu_csv(std::ostream& out, const TrackData& data, const std::vector<std::vector<double>>& nu,
                  const std::vector<std::vector<int>>& states) {
  out << "t,track_id,nu_hat,state_viterbi\n";
  for (std::size_t r = 0; r < data.tracks.size(); ++r) {
    const auto& tr = data.tracks[r];
    for (int t = 0; t < tr.length(); ++t) {
      out << t + 1 << ',' << tr.id << ',' << format_double(nu[r][static_cast<std::size_t>(t)]) << ',';
      if (r < states.size()) out << states[r][static_cast<std::size_t>(t)] + 1;
      out << '\n';
    }
  }
}

void write_threshold_csv(std::ostream& out, const FitResult& r) {
  out << "covariate,beta0,orig_min,orig_max,threshold,detected\n";
  const Eigen::VectorXd beta = r.beta0_hat.values();
  for (int k = 0; k < r.spec.p2(); ++k) {
    const auto ks = static_cast<std::size_t>(k);
    out << r.spec.threshold_covariates[ks] << ',' << format_double(beta[k]) << ','
        << format_double(r.threshold_scaling[ks].orig_min) << ',' << format_double(r.threshold_scaling[ks].orig_max) << ','
        << (r.thresholds_original[ks] ? format_double(*r.thresholds_original[ks]) : "NA") << ','
        << (r.disturbance_detected[ks] ? 1 : 0) << '\n';
  }
}

void write_replicates_csv(std::ostream& out, const ScenarioMetrics& m) {
  const int p2 = m.config.p2();
  const int n = 3;
  out << "scenario,T,replicate,seed,ok,lambda_hat,capped,converged,qreml_iterations,loglik";
  for (int k = 1; k <= p2; ++k) out << ",beta_true_" << k << ",beta_hat_" << k << ",detected_" << k;
  for (int i = 1; i <= n; ++i) out << ",mean_bias_" << i;
  for (int i = 1; i <= n; ++i) out << ",shape_bias_" << i;
  out << ",error\n";
  for (const auto& r : m.records) {
    out << m.config.id << ',' << m.config.T << ',' << r.replicate << ',' << r.seed << ',' << (r.ok ? 1 : 0) << ','
        << format_double(r.lambda_hat) << ',' << (r.capped ? 1 : 0) << ',' << (r.converged ? 1 : 0) << ','
        << r.qreml_iterations << ',' << format_double(r.loglik);
    for (int k = 0; k < p2; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      if (r.ok) {
        out << ',' << format_double(r.beta_true[ks]) << ',' << format_double(r.beta_hat[ks]) << ',' << (r.detected[ks] ? 1 : 0);
      } else {
        out << ",NA,NA,NA";
      }
    }
    for (int i = 0; i < n; ++i) out << ',' << (r.ok ? format_double(r.mean_bias[static_cast<std::size_t>(i)]) : "NA");
    for (int i = 0; i < n; ++i) out << ',' << (r.ok ? format_double(r.shape_bias[static_cast<std::size_t>(i)]) : "NA");
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    out << ",\"" << err << "\"\n";
  }
}

void write_metrics_csv(std::ostream& out, const ScenarioMetrics& m) {
  out << "scenario,T,metric,index,value\n";
  auto row = [&](const char* metric, int index, double value) {
    out << m.config.id << ',' << m.config.T << ',' << metric << ',' << index << ',' << format_double(value) << '\n';
  };
  row("replicates_ok", 0, m.n_ok);
  row("replicates_failed", 0, m.n_failed);
  for (std::size_t k = 0; k < m.slots.size(); ++k) {
    const auto& s = m.slots[k];
    const int idx = static_cast<int>(k) + 1;
    row(s.has_threshold ? "power" : "false_positive_rate", idx, s.detection_rate);
    row("beta_bias", idx, s.beta_bias);
    row("beta_sd", idx, s.beta_sd);
  }
  for (std::size_t i = 0; i < m.mean_bias.size(); ++i) row("mean_bias", static_cast<int>(i) + 1, m.mean_bias[i]);
  for (std::size_t i = 0; i < m.shape_bias.size(); ++i) row("shape_bias", static_cast<int>(i) + 1, m.shape_bias[i]);
}

std::vector<ScenarioMetrics> read_replicates_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("replicates CSV is empty");
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < header.size(); ++k) col[header[k]] = k;
  for (const char* required : {"scenario", "T", "replicate", "seed", "ok", "lambda_hat"})
    if (!col.count(required)) throw InvalidInput(std::string("replicates CSV lacks column '") + required + "'");

  std::vector<ScenarioMetrics> groups;
  std::vector<std::vector<ReplicateRecord>> records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) throw InvalidInput("replicates CSV line " + std::to_string(lineno) + ": wrong field count");
    auto field = [&](const std::string& name) -> const std::string& {
      const auto it = col.find(name);
      if (it == col.end()) throw InvalidInput("replicates CSV lacks column '" + name + "'");
      return f[it->second];
    };
    auto num = [&](const std::string& name) {
      const auto& s = field(name);
      if (is_absent(s)) return kNaN;
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size())
        throw InvalidInput("replicates CSV line " + std::to_string(lineno) + ": bad number in " + name);
      return v;
    };
    ScenarioConfig cfg;
    cfg.id = field("scenario");
    cfg.T = static_cast<int>(num("T"));
    cfg.validate();
    std::size_t g = 0;
    while (g < groups.size() && !(groups[g].config.id == cfg.id && groups[g].config.T == cfg.T)) ++g;
    if (g == groups.size()) {
      groups.push_back({});
      groups.back().config = cfg;
      records.emplace_back();
    }
    ReplicateRecord r;
    r.replicate = static_cast<int>(num("replicate"));
    r.seed = std::stoull(field("seed"));
    r.ok = num("ok") != 0.0;
    r.lambda_hat = num("lambda_hat");
    r.capped = col.count("capped") && num("capped") != 0.0;
    r.converged = col.count("converged") && num("converged") != 0.0;
    if (col.count("qreml_iterations")) r.qreml_iterations = static_cast<int>(num("qreml_iterations"));
    if (col.count("loglik")) r.loglik = num("loglik");
    if (col.count("error")) r.error = field("error");
    if (r.ok) {
      for (int k = 1; k <= cfg.p2(); ++k) {
        const auto ks = std::to_string(k);
        r.beta_true.push_back(num("beta_true_" + ks));
        r.beta_hat.push_back(num("beta_hat_" + ks));
        r.detected.push_back(num("detected_" + ks) != 0.0);
      }
      for (int i = 1; col.count("mean_bias_" + std::to_string(i)); ++i) {
        r.mean_bias.push_back(num("mean_bias_" + std::to_string(i)));
        r.shape_bias.push_back(num("shape_bias_" + std::to_string(i)));
      }
      r.fixed_point = r.lambda_hat * std::accumulate(r.beta_hat.begin(), r.beta_hat.end(), 0.0);
    }
    records[g].push_back(std::move(r));
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto cfg = groups[g].config;
    cfg.n_replicates = static_cast<int>(records[g].size());
    groups[g] = summarize(cfg, std::move(records[g]));
  }
  return groups;
}

std::string format_utc_timestamp(std::int64_t seconds) {
  using namespace std::chrono;
  const sys_seconds tp{std::chrono::seconds{seconds}};
  const auto day = floor<days>(tp);
  const year_month_day ymd{day};
  const hh_mm_ss hms{tp - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(hms.hours().count()),
                static_cast<int>(hms.minutes().count()), static_cast<int>(hms.seconds().count()));
  return buf;
}

SyntheticTelemetry make_synthetic_telemetry(const SyntheticTelemetryConfig& config) {
  if (config.T < 100) throw InvalidInput("synthetic track needs at least 100 fixes");
  if (!(config.threshold_km > 0.0)) throw InvalidInput("threshold_km must be positive");
  const int T = config.T;
  auto rng = derived_rng(config.seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Covariates: smooth distance to shore, a vessel passing on a slow cycle, land in blocks.
  std::vector<TelemetryRow> rows(static_cast<std::size_t>(T));
  double shore = 10.0;
  const std::int64_t t0 = 1577836800;  // 2020-01-01
  for (int t = 0; t < T; ++t) {
    auto& r = rows[static_cast<std::size_t>(t)];
    r.track_id = "synthetic";
    r.timestamp = format_utc_timestamp(t0 + static_cast<std::int64_t>(t * config.cadence_seconds));
    shore = std::clamp(shore + 0.3 * normal(rng), 0.5, 40.0);
    r.dist_shore_km = shore;
    const double cycle = 0.5 + 0.5 * std::sin(static_cast<double>(t) / 97.0);
    r.vessel_dist_km = std::max(1.0, 2.0 + 120.0 * cycle * cycle + 2.0 * normal(rng));
    r.land_between = std::sin(static_cast<double>(t) / 410.0 + 1.0) > 0.6;
    r.step_km = 1.0;  // placeholder so the layout ingests
    r.line = t + 2;
  }
  IngestConfig ic;
  ic.cadence_seconds = config.cadence_seconds;
  const auto layout = ingest_rows(rows, ic);

  SyntheticTelemetry out;
  out.spec = layout.spec;
  out.spec.streams.push_back({"angle", Family::vonmises, false});
  const std::vector<double> means{2.5, 1.0, 0.3}, shapes{6.0, 3.0, 1.5}, kappas{6.0, 1.5, 0.3};
  for (int i = 0; i < 3; ++i)
    out.theta.emissions.push_back({GammaParams{means[static_cast<std::size_t>(i)], shapes[static_cast<std::size_t>(i)]},
                                   VonMisesParams{0.0, kappas[static_cast<std::size_t>(i)]}});
  const std::vector<double> calm{0.9, 0.9, 0.9}, disturbed{0.9, 0.6, 0.6};
  out.theta.coeffs.baseline = persistence_to_coeffs(calm, 1);
  out.theta.coeffs.disturbed = persistence_to_coeffs(disturbed, 1);
  for (int p = 0; p < out.spec.n_pairs(); ++p) {
    out.theta.coeffs.baseline.alpha(p, 1) = 0.02;
    out.theta.coeffs.disturbed.alpha(p, 1) = 0.02;
  }
  out.theta.delta_baseline = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  out.theta.delta_disturbed = out.theta.delta_baseline;

  out.threshold_exposure = 1.0 / config.threshold_km;
  const auto& sc = layout.data.threshold_scaling[0];
  if (!(out.threshold_exposure > sc.orig_min && out.threshold_exposure < sc.orig_max))
    throw InvalidInput("threshold outside the exposure range of the synthetic track");
  out.beta_true = Beta0::from_values(std::vector<double>{(sc.orig_max - sc.orig_min) / (out.threshold_exposure - sc.orig_min), 0.0});

  TrackData base = layout.data;
  base.tracks[0].observations.resize(T, 2);
  base.tracks[0].observations.setOnes();
  const auto sim = simulate_thmm(out.spec, out.theta, out.beta_true, base, derived_seed(config.seed, 1));

  // Dead reckoning: the turn at fix t sets the heading of step t.
  constexpr double rad = std::numbers::pi / 180.0;
  double lat = 72.0 * rad, lon = -80.0 * rad;
  double heading = 2.0 * std::numbers::pi * unif(rng);
  for (int t = 0; t < T; ++t) {
    auto& r = rows[static_cast<std::size_t>(t)];
    r.step_km.reset();
    r.lat = lat / rad;
    r.lon = lon / rad;
    if (t > 0) heading += sim.tracks[0].observations(t, 1);
    const double d = sim.tracks[0].observations(t, 0) / kEarthRadiusKm;
    const double lat2 = std::asin(std::sin(lat) * std::cos(d) + std::cos(lat) * std::sin(d) * std::cos(heading));
    const double lon2 = lon + std::atan2(std::sin(heading) * std::sin(d) * std::cos(lat), std::cos(d) - std::sin(lat) * std::sin(lat2));
    lat = lat2;
    lon = wrap_angle(lon2);
  }
  out.rows = std::move(rows);
  return out;
}

}  // namespace thmm::io
