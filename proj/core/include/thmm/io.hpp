#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "thmm/blrt.hpp"
#include "thmm/estimation.hpp"
#include "thmm/likelihood.hpp"
#include "thmm/model.hpp"
#include "thmm/simulation.hpp"

namespace thmm::io {

inline constexpr double kEarthRadiusKm = 6371.0088;
inline constexpr const char* kFitSchema = "thmm.fit/1";

struct Diagnostic {
  int line = 0;  // 1-based line in the source file, 0 when not row-specific
  std::string message;
};

/// Input rejected; every problem found is listed.
class IngestError : public InvalidInput {
 public:
  IngestError(const std::string& what, std::vector<Diagnostic> diagnostics)
      : InvalidInput(what), diagnostics_(std::move(diagnostics)) {}
  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<Diagnostic> diagnostics_;
};

struct TelemetryRow {
  std::string track_id;
  std::string timestamp;
  std::optional<double> lat, lon;
  std::optional<double> step_km, turn_rad, max_depth_m;
  double dist_shore_km = 0.0;
  std::optional<double> vessel_dist_km;
  std::optional<bool> land_between;
  int line = 0;
};

struct IngestConfig {
  int n_states = 3;
  std::optional<double> cadence_seconds;  // required step between fixes; inferred per track when absent
  double mask_distance_km = 77.0;         // farther vessels leave the step in the baseline regime
  bool split_by_land = true;              // two exposure slots: no land between, land between
  bool estimate_angle_location = false;
  double sharpness = 500.0;
};

struct Ingested {
  ModelSpec spec;
  TrackData data;
  std::vector<TelemetryRow> rows;  // canonical rows: step and angle filled, positions dropped
};

double haversine_km(double lat1, double lon1, double lat2, double lon2, double radius_km = kEarthRadiusKm);

/// Initial great-circle bearing from point 1 to point 2, radians.
double initial_bearing(double lat1, double lon1, double lat2, double lon2);

/// Seconds since the epoch for "YYYY-MM-DDTHH:MM:SS[.fff][Z|+00:00]".
double parse_utc_timestamp(const std::string& text);

/// Header-driven CSV reader. Throws IngestError with per-row diagnostics.
std::vector<TelemetryRow> read_telemetry_csv(std::istream& in);

Ingested ingest_rows(const std::vector<TelemetryRow>& rows, const IngestConfig& config);
Ingested ingest_tracks(std::istream& in, const IngestConfig& config);
Ingested ingest_file(const std::string& path, const IngestConfig& config);

/// Writes rows in the canonical column order; reading them back reproduces the same TrackData.
void write_canonical_csv(std::ostream& out, const std::vector<TelemetryRow>& rows);

// --- configuration --------------------------------------------------------

struct RunConfig {
  IngestConfig ingest;
  FitOptions fit;
  ScenarioConfig scenario;
  BlrtConfig blrt;
  std::string input;
  std::string output_dir = ".";
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

/// Parses and validates; unknown keys and wrong types are errors.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig read_run_config(const std::string& path);
nlohmann::json to_json(const FitOptions& options);

// --- results ---------------------------------------------------------------

struct Provenance {
  std::uint64_t seed = 0;
  std::string version;
  std::string command;
  nlohmann::json options;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ThetaParams& theta, const ModelSpec& spec);
ThetaParams theta_from_json(const nlohmann::json& j, const ModelSpec& spec);

nlohmann::json serialize_result(const FitResult& result, const Provenance& provenance);
/// Inverse of serialize_result; nu_series is not part of the document.
FitResult read_result(const nlohmann::json& doc, Provenance* provenance = nullptr);

nlohmann::json to_json(const BlrtResult& result, const BlrtConfig& config);

/// t, track_id, nu_hat, state_viterbi (states 1-based).
void write_nu_csv(std::ostream& out, const TrackData& data, const std::vector<std::vector<double>>& nu,
                  const std::vector<std::vector<int>>& states);
void write_threshold_csv(std::ostream& out, const FitResult& result);
void write_replicates_csv(std::ostream& out, const ScenarioMetrics& metrics);
void write_metrics_csv(std::ostream& out, const ScenarioMetrics& metrics);

/// Inverse of write_replicates_csv, grouped by (scenario, T) in order of appearance.
std::vector<ScenarioMetrics> read_replicates_csv(std::istream& in);

/// "YYYY-MM-DDTHH:MM:SSZ" for whole seconds since the epoch.
std::string format_utc_timestamp(std::int64_t seconds);

// --- synthetic telemetry ---------------------------------------------------

struct SyntheticTelemetryConfig {
  int T = 8000;
  std::uint64_t seed = 1;
  double threshold_km = 10.0;  // vessel closer than this, no land between: disturbed
  double cadence_seconds = 1800.0;
};

struct SyntheticTelemetry {
  std::vector<TelemetryRow> rows;  // positions only; steps and angles left to ingestion
  ModelSpec spec;
  ThetaParams theta;
  Beta0 beta_true;
  double threshold_exposure = 0.0;  // 1 / threshold_km
};

/// One three-state track with step and turning-angle streams, a distance to
/// shore TPM covariate and a passing vessel. Positions are dead-reckoned from
/// the simulated steps and angles.
SyntheticTelemetry make_synthetic_telemetry(const SyntheticTelemetryConfig& config);

/// Deterministic text form of a double (shortest round-trip).
std::string format_double(double x);

}  // namespace thmm::io
