#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "biphoton/io.hpp"
#include "doctest.h"

using namespace biphoton;
namespace fs = std::filesystem;

namespace {

std::string scratch_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "biphoton_io_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

const char* kMinimalConfig = R"({
  "experiment": "minimal",
  "pump_wavelengths_nm": [780.2],
  "setup": {
    "source1": { "shape": "gaussian", "fwhm_thz": 9.0, "peak": 1.0 },
    "source2": { "shape": "sinc2", "fwhm_thz": 9.0, "peak": 0.8 }
  }
})";

}  // namespace

TEST_CASE("bundled configurations load and hash deterministically") {
  const RunConfig noiseless = load_config(std::string(CONFIGS_DIR) + "/smf28_noiseless.json");
  CHECK(noiseless.pump_wavelengths_nm.size() == 2);
  CHECK(noiseless.pump_wavelengths_nm[0] == 780.2);
  CHECK(noiseless.pump_wavelengths_nm[1] == 776.2);
  REQUIRE(noiseless.setup.fut.has_value());
  CHECK(noiseless.setup.fut->length_m == 5.0);
  CHECK_FALSE(noiseless.spectrometer_enabled);
  CHECK(noiseless.grid.n_points == 4001);

  const RunConfig tof = load_config(std::string(CONFIGS_DIR) + "/smf28_tof.json");
  CHECK(tof.spectrometer_enabled);
  CHECK(tof.spectrometer.jitter_fwhm_ps == 256.0);
  CHECK(tof.spectrometer.medium_dl_ps_per_nm == 340.0);
  CHECK_FALSE(tof.spectrometer_seed_from_config);

  const std::string h1 = config_hash(noiseless);
  const std::string h2 = config_hash(load_config(std::string(CONFIGS_DIR) + "/smf28_noiseless.json"));
  CHECK(h1 == h2);
  CHECK(h1.size() == 18);
  CHECK(h1.substr(0, 2) == "0x");
  CHECK(h1 != config_hash(tof));
}

TEST_CASE("unknown configuration keys are rejected with their path") {
  const std::string bad = R"({
    "experiment": "x",
    "pump_wavelengths_nm": [780.2],
    "setup": {
      "source1": { "shape": "gaussian", "fwhm_thz": 9.0, "peak": 1.0 },
      "source2": { "shape": "gaussian", "fwhm_thz": 9.0, "peak": 1.0, "phase": 3 }
    }
  })";
  try {
    config_from_json_text(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("source2") != std::string::npos);
    CHECK(msg.find("phase") != std::string::npos);
  }
}

TEST_CASE("taylor models need exactly one reference frequency") {
  const std::string bad = R"({
    "experiment": "x",
    "pump_wavelengths_nm": [780.2],
    "setup": {
      "source1": { "shape": "gaussian", "fwhm_thz": 9.0, "peak": 1.0 },
      "source2": { "shape": "gaussian", "fwhm_thz": 9.0, "peak": 1.0 },
      "fut": {
        "length_m": 5.0,
        "model": { "type": "taylor_beta", "omega_ref_radps": 1207.0,
                   "lambda_ref_nm": 1560.4, "k2_ps2_km": -21.4 }
      }
    }
  })";
  CHECK_THROWS_AS(config_from_json_text(bad), ConfigError);
}

TEST_CASE("setup instantiation plants envelopes at the degeneracy frequency") {
  const RunConfig config = config_from_json_text(kMinimalConfig);
  const InterferometerSetup setup = instantiate_setup(config, 780.2);
  CHECK(setup.source1.omega_deg_radps ==
        doctest::Approx(0.5 * omega_from_wavelength(780.2)).epsilon(1e-15));
  CHECK(setup.source1.fwhm_radps == doctest::Approx(radps_from_thz(9.0)).epsilon(1e-15));
  CHECK(setup.source2.shape == EnvelopeShape::sinc2);
  CHECK(setup.lambda_deg() == doctest::Approx(1560.4));

  const FrequencyGrid grid = make_grid(config.grid);
  CHECK(grid.delta_max_radps == doctest::Approx(kPi * config.grid.span_thz).epsilon(1e-15));
  CHECK(grid.n_points == config.grid.n_points);

  const PipelineOptions counts = pipeline_options(config, true);
  CHECK(counts.normalize.auto_scale);
  const PipelineOptions noiseless = pipeline_options(config, false);
  CHECK_FALSE(noiseless.normalize.auto_scale);
}

TEST_CASE("spectrum files round-trip every bit of data and metadata") {
  const RunConfig config = config_from_json_text(kMinimalConfig);
  const InterferometerSetup setup = instantiate_setup(config, 780.2);
  const Interferogram s = synthesize(setup, make_grid({2.0, 101}));
  const std::string path = scratch_path("spectrum.csv");
  write_spectrum_csv(path, s, config_hash(config));
  const Interferogram r = read_spectrum_csv(path);
  REQUIRE(r.size() == s.size());
  CHECK(r.detuning_radps == s.detuning_radps);
  CHECK(r.values == s.values);
  CHECK(r.pump_wavelength_nm == s.pump_wavelength_nm);
  CHECK(r.lambda_deg_nm == s.lambda_deg_nm);
  CHECK(r.setup_hash == s.setup_hash);
  CHECK(r.with_fut == s.with_fut);
  CHECK(r.coherence_ok == s.coherence_ok);
}

TEST_CASE("histogram files round-trip counts and the measurement settings") {
  const RunConfig config = config_from_json_text(kMinimalConfig);
  const InterferometerSetup setup = instantiate_setup(config, 780.2);
  const Interferogram s = synthesize(setup, make_grid({4.0, 401}));
  SpectrometerConfig sc;
  sc.pair_count = 2e4;
  sc.rng_seed = 17;
  const TimeDelayHistogram h = sample_events(s, sc, 780.2);
  const std::string path = scratch_path("histogram.csv");
  write_histogram_csv(path, h, config_hash(config));
  const TimeDelayHistogram r = read_histogram_csv(path);
  CHECK(r.counts == h.counts);
  CHECK(r.t_start_ps == h.t_start_ps);
  CHECK(r.bin_width_ps == h.bin_width_ps);
  CHECK(r.total_counts == h.total_counts);
  CHECK(r.dropped == h.dropped);
  CHECK(r.config.medium_dl_ps_per_nm == h.config.medium_dl_ps_per_nm);
  CHECK(r.config.jitter_fwhm_ps == h.config.jitter_fwhm_ps);
  CHECK(r.config.rng_seed == h.config.rng_seed);
  CHECK(r.pump_wavelength_nm == h.pump_wavelength_nm);
  CHECK(r.source_setup_hash == h.source_setup_hash);
}

TEST_CASE("reports serialize losslessly including missing values") {
  Report report;
  report.tool_version = tool_version();
  report.config_hash = "0x0123456789abcdef";
  report.seed = 20260814;
  report.experiment = "io test";
  DispersionEstimate e;
  e.lambda_deg_nm = 1560.4;
  e.k2_ps2_km = -21.374109573737;
  e.sigma_k2_ps2_km = 0.2;
  e.d_ps_nm_km = 16.535476692067;
  e.sigma_d_ps_nm_km = 0.154724;
  e.fut_length_m = 5.0;
  report.estimates.push_back(e);
  PumpDiagnostics diag;
  diag.pump_wavelength_nm = 780.2;
  diag.lambda_deg_nm = 1560.4;
  diag.visibility_with = 0.93;
  diag.coherence_pass = true;
  diag.coherence_ratio = std::numeric_limits<double>::infinity();
  diag.coherence_ratio = std::min(diag.coherence_ratio, 1e300);
  report.diagnostics.push_back(diag);

  const std::string text = report_to_json_text(report);
  const Report back = report_from_json_text(text);
  CHECK(back.tool_version == report.tool_version);
  CHECK(back.seed == report.seed);
  REQUIRE(back.estimates.size() == 1);
  CHECK(back.estimates[0].d_ps_nm_km == e.d_ps_nm_km);
  CHECK(back.estimates[0].sigma_d_ps_nm_km == e.sigma_d_ps_nm_km);
  CHECK(std::isnan(back.estimates[0].sigma_d_bootstrap));
  CHECK_FALSE(back.slope.has_value());
  REQUIRE(back.diagnostics.size() == 1);
  CHECK(back.diagnostics[0].coherence_ratio == 1e300);
  CHECK(report_to_json_text(back) == text);

  const std::string path = scratch_path("report.json");
  write_report(path, report);
  const Report from_disk = read_report(path);
  CHECK(report_to_json_text(from_disk) == text);
}

TEST_CASE("value-uncertainty notation follows the last-digit convention") {
  CHECK(format_value_uncertainty(16.69, 0.05) == "16.69(5)");
  CHECK(format_value_uncertainty(16.535476692067, 0.154724) == "16.54(15)");
  CHECK(format_value_uncertainty(0.07875, 0.0151038) == "0.079(15)");
  CHECK(format_value_uncertainty(123.4, 12.0) == "123(12)");
  CHECK(format_value_uncertainty(1234.0, 130.0) == "1230(130)");
  CHECK(format_value_uncertainty(5.0, 0.0) == "5");

  auto [v1, s1] = parse_value_uncertainty("16.69(5)");
  CHECK(v1 == doctest::Approx(16.69));
  CHECK(s1 == doctest::Approx(0.05));
  auto [v2, s2] = parse_value_uncertainty("0.079(15)");
  CHECK(v2 == doctest::Approx(0.079));
  CHECK(s2 == doctest::Approx(0.015));
  auto [v3, s3] = parse_value_uncertainty("1230(130)");
  CHECK(v3 == doctest::Approx(1230.0));
  CHECK(s3 == doctest::Approx(130.0));
  CHECK_THROWS_AS(parse_value_uncertainty("16.69"), ConfigError);
}

TEST_CASE("atomic writes replace files completely") {
  const std::string path = scratch_path("atomic.txt");
  atomic_write_text(path, "first version\n");
  atomic_write_text(path, "second\n");
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  CHECK(content == "second\n");
  CHECK_FALSE(fs::exists(path + ".tmp"));
}
