#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "biphoton/synthesis.hpp"

namespace biphoton {

// Normalized fringe n(delta) = (S - F1 - F2) / (2 sqrt(F1 F2)), ideally
// cos(Phi). Points where either envelope falls below the floor are masked.
struct NormalizedSpectrum {
  std::vector<double> detuning_radps;
  std::vector<double> values;        // clipped on masked-in points
  std::vector<double> sigma;         // sigma_n per point, empty if noiseless
  std::vector<std::uint8_t> mask;    // 1 = usable
  double clipping_fraction = 0.0;    // masked-in points that hit the clip
  double scale_applied = 1.0;        // count-scale factor when auto_scale
  double lambda_deg_nm = 0.0;
  double pump_wavelength_nm = 0.0;
  bool with_fut = false;
  std::string origin;

  std::size_t size() const { return detuning_radps.size(); }
};

struct NormalizeOptions {
  double envelope_floor = 0.05;  // fraction of each envelope's peak
  double clip = 1.2;
  // Rescale the measured spectrum to the envelope sum first (delta^2-weighted
  // ratio of sums); needed for count-scaled spectrometer data.
  bool auto_scale = false;
};

NormalizedSpectrum normalize(const Interferogram& measured, const Interferogram& env1,
                             const Interferogram& env2, const NormalizeOptions& opts = {});

// Linear interpolation of a smooth spectrum (an envelope) onto another
// detuning axis. Points outside the source support get 0 so the envelope
// floor masks them out downstream. Not meant for fringe data.
Interferogram resample_onto(const Interferogram& src, const std::vector<double>& detuning_radps);

// Weighted nonlinear least-squares fit of
//   n(delta) ~ s * (1 + V cos(c0 + c2 delta^2 + c4 delta^4)) - 1,
// the raised-cosine fringe model; s is the amplitude scale (1 for ideal
// data). The cosine's sign ambiguity is resolved to the c2 > 0 branch, which
// assumes the total quadratic phase is positive over the window (true for
// anomalous-dispersion setups like the bundled ones).
struct RaisedCosineFit {
  double c0_rad = 0.0;
  double c2_rad_ps2 = 0.0;
  double c4_rad_ps4 = 0.0;
  double visibility = 0.0;
  double amplitude_scale = 1.0;
  // Marginal covariance of (c0, c2, c4, V), scaled by reduced chi-square.
  std::array<std::array<double, 4>, 4> covariance{};
  double residual_rms = 0.0;
  double window_halfwidth_radps = 0.0;
  int n_points = 0;
  int iterations = 0;
  bool converged = false;

  double sigma_c2() const;
  double sigma_c4() const;
  double phase_at(double detuning_radps) const;
};

struct FitOptions {
  double window_halfwidth_radps = 0.0;  // 0 = full masked grid
  bool include_quartic = true;
  int max_iterations = 300;
  int max_restarts = 4;
};

// Non-convergence after bounded restarts; carries best-so-far diagnostics.
class FitError : public std::runtime_error {
 public:
  FitError(const std::string& msg, RaisedCosineFit best)
      : std::runtime_error(msg), best_(best) {}
  const RaisedCosineFit& best() const { return best_; }

 private:
  RaisedCosineFit best_;
};

RaisedCosineFit fit_raised_cosine(const NormalizedSpectrum& normalized,
                                  const FitOptions& opts = {});

// Unwrapped interferometric phase samples with uncertainties.
struct PhaseTrace {
  std::vector<double> detuning_radps;
  std::vector<double> phase_rad;
  std::vector<double> sigma_rad;
  std::vector<std::uint8_t> mask;
  double asymmetry = 0.0;    // RMS odd component of the normalized fringe
  double asymmetry_z = 0.0;  // same, in units of its propagated sigma
  double lambda_deg_nm = 0.0;
};

// Fit-free diagnostic: Phi = arccos(n), branch-corrected by walking outward
// from delta = 0 assuming Phi is monotone in |delta|. Requires a symmetric
// grid; the result is even-symmetrized with the asymmetry reported.
// Cannot see the sign of Phi(0); comparisons should zero the constant first.
PhaseTrace extract_phase_pointwise(const NormalizedSpectrum& normalized);

// Odd component of the normalized fringe, from mirror pairs (interpolated
// when the grid is not exactly symmetric). rms is in normalized units; z is
// the same in units of the propagated per-pair sigma (0 when noiseless).
struct AsymmetryResult {
  double rms = 0.0;
  double z = 0.0;
  std::size_t n_pairs = 0;
};
AsymmetryResult normalized_asymmetry(const NormalizedSpectrum& normalized);

// Difference of the with-FUT and reference fits, constant term dropped.
struct SubtractedCoefficients {
  double dc2_rad_ps2 = 0.0;
  double dc4_rad_ps4 = 0.0;
  double sigma_dc2 = 0.0;
  double sigma_dc4 = 0.0;
  double cov_c2c4 = 0.0;
};

SubtractedCoefficients subtract_reference(const RaisedCosineFit& with_fut,
                                          const RaisedCosineFit& without_fut);

// Evaluates dc2 delta^2 + dc4 delta^4 with propagated sigma on a grid.
PhaseTrace phase_from_coefficients(const SubtractedCoefficients& coeffs,
                                   const std::vector<double>& detuning_radps,
                                   double lambda_deg_nm);

// Pointwise difference on a shared grid, zeroed at the innermost shared
// point, sigma added in quadrature. The global sign (arbitrary after arccos
// reconstruction) is aligned with the positive-quadratic branch.
PhaseTrace subtract_reference(const PhaseTrace& with_fut, const PhaseTrace& without_fut);

enum class EstimateMethod { parametric, pointwise };

struct DispersionEstimate {
  double lambda_deg_nm = 0.0;
  double k2_ps2_km = 0.0;
  double sigma_k2_ps2_km = 0.0;
  double d_ps_nm_km = 0.0;
  double sigma_d_ps_nm_km = 0.0;
  double fut_length_m = 0.0;
  EstimateMethod method = EstimateMethod::parametric;
  // Filled by bootstrap_uncertainty, NaN otherwise.
  double sigma_d_bootstrap = std::numeric_limits<double>::quiet_NaN();
  double sigma_k2_bootstrap = std::numeric_limits<double>::quiet_NaN();
};

// k2 = -dc2 / L. With dc2 in rad ps^2 and L in m this gives ps^2/m; the
// explicit 1e3 factor converts to ps^2/km. D follows from d_from_k2.
DispersionEstimate estimate_dispersion(const SubtractedCoefficients& delta,
                                       double fut_length_m, double lambda_deg_nm,
                                       EstimateMethod method = EstimateMethod::parametric);

// Same estimate from a subtracted phase trace via weighted linear least
// squares of Phi = a + c2 delta^2 + c4 delta^4.
DispersionEstimate estimate_dispersion(const PhaseTrace& delta_phase,
                                       double fut_length_m, double lambda_deg_nm);

struct SlopeEstimate {
  double s_ps_nm2_km = 0.0;
  double sigma_s = 0.0;
  double lambda1_nm = 0.0;
  double lambda2_nm = 0.0;
  double midpoint_nm = 0.0;
};

// Finite-difference dispersion slope between two degeneracy wavelengths,
// uncertainties combined in quadrature.
SlopeEstimate slope_from_two(const DispersionEstimate& e1, const DispersionEstimate& e2);

// Smallest dispersion-length product giving at least phase_threshold of
// quadratic phase at the band edge: DL_min = threshold * 2 pi c /
// (lambda^2 (bandwidth/2)^2), in ps/nm.
double min_measurable_dl(double bandwidth_full_radps, double phase_threshold_rad,
                         double lambda_nm);

struct PipelineOptions {
  NormalizeOptions normalize;
  FitOptions fit;
};

struct ExtractionResult {
  NormalizedSpectrum norm_with;
  NormalizedSpectrum norm_without;
  RaisedCosineFit fit_with;
  RaisedCosineFit fit_without;
  SubtractedCoefficients coeffs;
  DispersionEstimate estimate;
};

// The full inverse pipeline: normalize both interferograms against the
// envelopes, fit raised cosines, subtract the reference, convert to D.
// Envelopes are resampled onto each measured grid when the grids differ.
ExtractionResult extract_dispersion(const Interferogram& with_fut,
                                    const Interferogram& without_fut,
                                    const Interferogram& env1, const Interferogram& env2,
                                    double fut_length_m, const PipelineOptions& opts = {});

struct BootstrapOptions {
  int n_resamples = 200;  // >= 50
  std::uint64_t seed = 1;
};

// Poisson-resamples the measured counts of both interferograms, reruns the
// pipeline per replica (parallel, sub-seeded by replica index), and augments
// the base estimate with the empirical sigma. Throws if more than 20% of
// replica fits fail. Noiseless inputs resample to themselves, so the
// bootstrap sigma is exactly 0.
DispersionEstimate bootstrap_uncertainty(const Interferogram& with_fut,
                                         const Interferogram& without_fut,
                                         const Interferogram& env1,
                                         const Interferogram& env2,
                                         double fut_length_m, const PipelineOptions& opts,
                                         const BootstrapOptions& boot,
                                         Exec exec = Exec::parallel);

}  // namespace biphoton
