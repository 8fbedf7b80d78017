#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "biphoton/extraction.hpp"
#include "biphoton/spectrometer.hpp"
#include "biphoton/synthesis.hpp"

namespace biphoton {

// Schema or value problems in user-provided configuration; mapped to a
// distinct process exit code by the CLI.
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SourceSpec {
  EnvelopeShape shape = EnvelopeShape::gaussian;
  double fwhm_thz = 12.0;
  double peak = 1.0;
};

// Pump-independent description of the interferometer; instantiate_setup
// plants the envelopes at omega_deg for a concrete pump.
struct SetupTemplate {
  SourceSpec source1;
  SourceSpec source2;
  std::vector<FiberSegment> internal_segments;
  EvenPolyPhase internal_poly;
  std::optional<FiberSegment> fut;
  double pump_linewidth_mhz = 0.1;
  double path_mismatch_m = 0.0;
};

struct GridConfig {
  double span_thz = 10.0;  // full width of the detuning grid
  int n_points = 2001;
};

struct ExtractionConfig {
  double window_halfwidth_thz = 0.0;  // 0 = full masked grid
  bool include_quartic = true;
  double envelope_floor = 0.05;
  int bootstrap_resamples = 0;  // 0 = no bootstrap
};

struct RoundtripConfig {
  double noiseless_tol_frac = 0.001;
  double noisy_tol_frac = 0.01;
  double slope_sigma_factor = 3.0;
};

struct RunConfig {
  std::string experiment;
  std::vector<double> pump_wavelengths_nm;  // one or two
  SetupTemplate setup;
  GridConfig grid;
  bool spectrometer_enabled = false;
  SpectrometerConfig spectrometer;
  bool spectrometer_seed_from_config = false;  // rng_seed given explicitly
  ExtractionConfig extraction;
  RoundtripConfig roundtrip;
  std::string output_dir = "out";
  std::uint64_t master_seed = 1;
};

RunConfig load_config(const std::string& path);
RunConfig config_from_json_text(const std::string& text);

// FNV-1a over the canonical re-serialized config, as "0x" + 16 hex digits.
std::string config_hash(const RunConfig& config);

InterferometerSetup instantiate_setup(const RunConfig& config, double pump_nm);
FrequencyGrid make_grid(const GridConfig& grid);
PipelineOptions pipeline_options(const RunConfig& config, bool measured_is_counts);

std::string tool_version();

// Spectrum CSV: '# key: value' header lines, a column header, then
// detuning_radps,wavelength_nm,intensity[,sigma] rows.
void write_spectrum_csv(const std::string& path, const Interferogram& spectrum,
                        const std::string& config_hash_hex);
Interferogram read_spectrum_csv(const std::string& path);

// Histogram CSV: '# key: value' header (config echo), then bin_center_ps,counts.
void write_histogram_csv(const std::string& path, const TimeDelayHistogram& hist,
                         const std::string& config_hash_hex);
TimeDelayHistogram read_histogram_csv(const std::string& path);

// Phase-trace CSV: detuning_radps,phase_rad,sigma_rad over masked-in points.
void write_phase_csv(const std::string& path, const PhaseTrace& trace,
                     const std::string& config_hash_hex);

struct PumpDiagnostics {
  double pump_wavelength_nm = 0.0;
  double lambda_deg_nm = 0.0;
  double visibility_with = 0.0;
  double visibility_without = 0.0;
  double amplitude_scale_with = 1.0;
  double amplitude_scale_without = 1.0;
  double clipping_fraction_with = 0.0;
  double clipping_fraction_without = 0.0;
  double residual_rms_with = 0.0;
  double residual_rms_without = 0.0;
  double asymmetry_z_with = 0.0;
  double asymmetry_z_without = 0.0;
  bool coherence_pass = true;
  double coherence_ratio = 0.0;  // capped at 1e300 so serialized form is finite
};

struct Report {
  std::string tool_version;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string experiment;
  std::vector<DispersionEstimate> estimates;
  std::optional<SlopeEstimate> slope;
  std::vector<PumpDiagnostics> diagnostics;
};

std::string report_to_json_text(const Report& report);
Report report_from_json_text(const std::string& text);
void write_report(const std::string& path, const Report& report);
Report read_report(const std::string& path);

// Compact value-uncertainty notation: one sigma in units of the last printed
// digit, two sigma digits when the leading one is 1 ("16.69(5)", "0.078(13)").
std::string format_value_uncertainty(double value, double sigma);
std::pair<double, double> parse_value_uncertainty(const std::string& text);

// Write-then-rename so concurrent readers never see a partial file.
void atomic_write_text(const std::string& path, const std::string& content);

// Subcommand bodies (flag parsing lives in the CLI binary). All write into
// config.output_dir and throw on failure.
void cmd_simulate(const RunConfig& config, bool quiet);
void cmd_spectrometer(const RunConfig& config, const std::string& input_csv, bool quiet);

struct ExtractArgs {
  std::vector<std::string> with_files;
  std::vector<std::string> without_files;
  std::vector<std::string> env1_files;
  std::vector<std::string> env2_files;
  double fut_length_m = 0.0;
  std::optional<double> lambda_deg_nm;  // default: CSV metadata
};

Report cmd_extract(const RunConfig& config, const ExtractArgs& args, bool quiet);

// Full in-memory pipeline against model truth; returns overall pass.
bool cmd_roundtrip(const RunConfig& config, bool quiet);

}  // namespace biphoton
