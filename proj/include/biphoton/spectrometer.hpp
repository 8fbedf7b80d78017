#pragma once

#include <cstdint>
#include <vector>

#include "biphoton/synthesis.hpp"

namespace biphoton {

// Dispersive-fiber time-of-flight spectrometer. A photon pair born at signal
// wavelength lambda_s (idler at the energy conjugate) arrives with time
// difference delta_t = medium_dl * (lambda_s - lambda_i).
struct SpectrometerConfig {
  double medium_dl_ps_per_nm = 340.0;   // signed dispersion-length product
  double jitter_fwhm_ps = 256.0;        // effective pair jitter on delta_t
  double detector1_jitter_fwhm_ps = 0.0;  // used when jitter_fwhm_ps == 0:
  double detector2_jitter_fwhm_ps = 0.0;  // combined in quadrature
  double bin_width_ps = 16.0;
  double pair_count = 1e6;              // expected total coincidences
  double dark_fraction = 0.0;           // uniform background share, [0, 1)
  std::uint64_t rng_seed = 1;
  double window_halfwidth_nm = 100.0;   // calibrated window around lambda_deg

  double effective_jitter_fwhm_ps() const;
};

void validate(const SpectrometerConfig& config);

struct TimeDelayHistogram {
  double t_start_ps = 0.0;  // left edge of bin 0
  double bin_width_ps = 0.0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total_counts = 0;  // sum of counts
  std::uint64_t dropped = 0;       // events jittered outside the window
  SpectrometerConfig config;
  double pump_wavelength_nm = 0.0;
  std::uint64_t source_setup_hash = 0;
  bool source_with_fut = false;

  std::size_t size() const { return counts.size(); }
  double edge(std::size_t i) const { return t_start_ps + bin_width_ps * static_cast<double>(i); }
  double bin_center(std::size_t i) const { return edge(i) + 0.5 * bin_width_ps; }
};

// Arrival-time difference for a signal at lambda_signal. The idler wavelength
// solves omega_i = omega_p - omega_s exactly (no linearization). Odd in
// detuning, zero at degeneracy. Throws std::out_of_range outside the
// calibrated window.
double delay_map(const SpectrometerConfig& config, double lambda_signal_nm,
                 double lambda_pump_nm);

// Monotone inverse of delay_map by bisection over the calibrated window;
// round-trips to better than 1e-9 ps.
double inverse_delay_map(const SpectrometerConfig& config, double dt_ps,
                         double lambda_pump_nm);

// Wavelength resolution max(jitter, bin_width) / |medium_dl| in nm.
double resolution(const SpectrometerConfig& config);

// Monte-Carlo realization of the measurement: draws Poisson(pair_count)
// events from the spectrum by inverse-CDF sampling (trapezoid cell weights,
// uniform placement inside a cell), maps each through delay_map, adds
// gaussian jitter, mixes in uniform dark events, and bins. Events are
// processed in fixed shards of 65536 with sub-seeds derived from
// (rng_seed, shard), so the histogram is bit-identical for serial and
// parallel execution.
TimeDelayHistogram sample_events(const Interferogram& spectrum,
                                 const SpectrometerConfig& config,
                                 double lambda_pump_nm, Exec exec = Exec::parallel);

// Maps bin centers back through inverse_delay_map and corrects counts by the
// frequency Jacobian |d(delta_t)/d(omega_s)| so a flat spectral density in
// omega stays flat. Per-point sigma = sqrt(max(counts,1)) * scale. Output is
// ordered by increasing detuning.
Interferogram histogram_to_spectrum(const TimeDelayHistogram& hist,
                                    double lambda_pump_nm);

}  // namespace biphoton
