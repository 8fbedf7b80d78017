#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "biphoton/dispersion.hpp"

namespace biphoton {

enum class EnvelopeShape { gaussian, sinc2 };

// Spectral intensity |F(omega)|^2 of one SPDC source, even about omega_deg.
// fwhm is the full width at half maximum of the intensity.
struct SpdcEnvelope {
  double omega_deg_radps = 0.0;
  double fwhm_radps = 0.0;
  EnvelopeShape shape = EnvelopeShape::gaussian;
  double peak = 1.0;
};

// Argument at which sinc^2 falls to one half, found by bisection and pinned
// by a root-finding test.
inline constexpr double kSinc2HalfPoint = 1.391557378251510;

double envelope_value(const SpdcEnvelope& env, double omega_radps);

// Even polynomial phase c0 + c2*delta^2 + c4*delta^4 standing in for the
// part of the internal phase not attributed to a fiber segment.
struct EvenPolyPhase {
  double c0_rad = 0.0;
  double c2_rad_ps2 = 0.0;
  double c4_rad_ps4 = 0.0;
};

struct InterferometerSetup {
  double pump_wavelength_nm = 0.0;
  SpdcEnvelope source1;
  SpdcEnvelope source2;
  std::vector<FiberSegment> internal_segments;
  EvenPolyPhase internal_poly;
  std::optional<FiberSegment> fut;
  double pump_linewidth_mhz = 0.1;
  double path_mismatch_m = 0.0;

  double omega_pump() const { return omega_from_wavelength(pump_wavelength_nm); }
  double omega_deg() const { return 0.5 * omega_pump(); }
  double lambda_deg() const { return 2.0 * pump_wavelength_nm; }
};

// Uniform detuning grid about omega_deg. For symmetric ranges
// (delta_min == -delta_max) points are generated so that point i is the exact
// IEEE negation of point n-1-i, which the extraction symmetry checks rely on.
struct FrequencyGrid {
  double delta_min_radps = 0.0;
  double delta_max_radps = 0.0;
  int n_points = 0;

  std::vector<double> points() const;
};

// Sampled spectral intensity on a strictly increasing detuning axis. Uniform
// for synthesized data; spectrometer-recovered spectra are slightly
// non-uniform because time bins are uniform, not frequency bins.
struct Interferogram {
  std::vector<double> detuning_radps;
  std::vector<double> values;
  std::vector<double> sigma;   // per-point 1-sigma, empty when noiseless
  std::vector<double> counts;  // raw bin counts, empty unless recovered
  double pump_wavelength_nm = 0.0;
  double lambda_deg_nm = 0.0;
  std::uint64_t setup_hash = 0;
  bool with_fut = false;
  bool coherence_ok = true;
  std::string origin;  // "synthesize", "spectrometer", or a file path

  std::size_t size() const { return detuning_radps.size(); }
};

struct CoherenceResult {
  bool pass = false;
  double ratio = 0.0;  // coherence length / path mismatch (inf at mismatch 0)
  double coherence_length_m = 0.0;
};

// Pump coherence criterion: in-fiber coherence length c/(n pi dnu) must be
// at least 100x the path mismatch. Group index defaults to silica fiber.
CoherenceResult coherence_check(double pump_linewidth_mhz, double path_mismatch_m,
                                double group_index = 1.468);

// Interferometric phase Phi_int + Phi_FUT at omega.
double total_phase(const InterferometerSetup& setup, double omega_radps);

// S(omega) = F1 + F2 + 2 sqrt(F1 F2) cos(Phi); equals 2F(1+cos Phi) for
// identical sources. A failed coherence_check only clears coherence_ok.
Interferogram synthesize(const InterferometerSetup& setup, const FrequencyGrid& grid,
                         Exec exec = Exec::parallel);

// Local fringe contrast 2 sqrt(F1 F2) / (F1 + F2). Both envelopes zero is
// undefined and throws.
double visibility(const SpdcEnvelope& env1, const SpdcEnvelope& env2,
                  double omega_radps);

// Envelope sampled on a grid as a fringe-free Interferogram (the reference
// spectra the extraction pipeline normalizes against).
Interferogram sample_envelope(const SpdcEnvelope& env, const FrequencyGrid& grid);

// Order-independent digest of the physics fields, stored in Interferogram
// metadata and file headers.
std::uint64_t setup_fingerprint(const InterferometerSetup& setup);

}  // namespace biphoton
