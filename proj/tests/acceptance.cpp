#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "biphoton/extraction.hpp"
#include "biphoton/spectrometer.hpp"
#include "biphoton/synthesis.hpp"

using namespace biphoton;

namespace {

bool g_all_ok = true;

void verdict(int index, bool ok, const std::string& text) {
  g_all_ok = g_all_ok && ok;
  std::printf("[%s] %d. %s\n", ok ? "PASS" : "FAIL", index, text.c_str());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

InterferometerSetup make_setup(double pump_nm, double fut_length_m) {
  InterferometerSetup s;
  s.pump_wavelength_nm = pump_nm;
  for (SpdcEnvelope* env : {&s.source1, &s.source2}) {
    env->omega_deg_radps = s.omega_deg();
    env->fwhm_radps = radps_from_thz(9.0);
    env->shape = EnvelopeShape::gaussian;
    env->peak = 1.0;
  }
  s.source2.peak = 0.85;
  s.internal_poly = {0.4, 0.18, 0.0};
  s.internal_segments.push_back({SpecSheetModel{1313.0, 0.085}, 0.5, "patch"});
  if (fut_length_m > 0.0)
    s.fut = FiberSegment{SpecSheetModel{1313.0, 0.085}, fut_length_m, "FUT"};
  s.pump_linewidth_mhz = 0.1;
  s.path_mismatch_m = 0.03;
  return s;
}

FrequencyGrid grid_of(int n, double halfwidth) {
  FrequencyGrid g;
  g.delta_min_radps = -halfwidth;
  g.delta_max_radps = halfwidth;
  g.n_points = n;
  return g;
}

SpectrometerConfig tof_config(std::uint64_t seed) {
  SpectrometerConfig c;
  c.medium_dl_ps_per_nm = 340.0;
  c.jitter_fwhm_ps = 256.0;
  c.bin_width_ps = 16.0;
  c.pair_count = 1e6;
  c.dark_fraction = 0.0;
  c.rng_seed = seed;
  c.window_halfwidth_nm = 100.0;
  return c;
}

struct NoisyResult {
  DispersionEstimate estimate;
  ExtractionResult full;
};

NoisyResult run_noisy(const InterferometerSetup& setup, const FrequencyGrid& grid,
                      std::uint64_t seed_with, std::uint64_t seed_without,
                      double window_halfwidth_radps) {
  InterferometerSetup reference = setup;
  reference.fut.reset();
  const double pump = setup.pump_wavelength_nm;
  const Interferogram synth_with = synthesize(setup, grid);
  const Interferogram synth_without = synthesize(reference, grid);
  const Interferogram meas_with =
      histogram_to_spectrum(sample_events(synth_with, tof_config(seed_with), pump), pump);
  const Interferogram meas_without = histogram_to_spectrum(
      sample_events(synth_without, tof_config(seed_without), pump), pump);
  PipelineOptions opts;
  opts.normalize.auto_scale = true;
  opts.fit.window_halfwidth_radps = window_halfwidth_radps;
  NoisyResult r;
  r.full = extract_dispersion(meas_with, meas_without,
                              sample_envelope(setup.source1, grid),
                              sample_envelope(setup.source2, grid),
                              setup.fut->length_m, opts);
  r.estimate = r.full.estimate;
  return r;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void criterion_resolution() {
  SpectrometerConfig c;
  c.medium_dl_ps_per_nm = 340.0;
  c.jitter_fwhm_ps = 256.0;
  c.bin_width_ps = 16.0;
  const double r = resolution(c);
  const bool ok = std::abs(r - 256.0 / 340.0) < 1e-12 && std::abs(r - 0.75) < 0.005;
  verdict(1, ok,
          "wavelength resolution 256 ps / 340 ps/nm = " + fmt(r) +
              " nm (expected 0.75 nm to 2 significant figures)");
}

void criterion_slope_formula() {
  DispersionEstimate a, b;
  a.d_ps_nm_km = 16.69;
  a.sigma_d_ps_nm_km = 0.05;
  a.lambda_deg_nm = 1560.4;
  b.d_ps_nm_km = 16.06;
  b.sigma_d_ps_nm_km = 0.11;
  b.lambda_deg_nm = 1552.4;
  const SlopeEstimate s = slope_from_two(a, b);
  const bool ok = std::abs(s.s_ps_nm2_km - 0.07875) < 1e-12 &&
                  std::abs(s.s_ps_nm2_km - 0.078) <= 0.013 &&
                  std::abs(s.sigma_s - 0.015103807467) < 1e-9;
  verdict(2, ok,
          "slope 16.69(5) vs 16.06(11) over 8 nm = " + fmt(s.s_ps_nm2_km) + " +/- " +
              fmt(s.sigma_s) + " ps/nm^2/km (inside 0.078 +/- 0.013)");
}

void criterion_sensitivity() {
  const double dl = min_measurable_dl(radps_from_thz(10.0), 2.5, 1560.4);
  const bool ok = std::abs(dl - 0.002) / 0.002 <= 0.10;
  verdict(3, ok,
          "minimum dispersion-length product over a 10 THz band at 2.5 rad = " + fmt(dl) +
              " ps/nm (expected ~0.002 +/- 10%)");
}

void criterion_noiseless_roundtrip() {
  const InterferometerSetup setup = make_setup(780.2, 5.0);
  InterferometerSetup reference = setup;
  reference.fut.reset();
  const FrequencyGrid grid = grid_of(4001, kPi * 10.0);
  const ExtractionResult res = extract_dispersion(
      synthesize(setup, grid), synthesize(reference, grid),
      sample_envelope(setup.source1, grid), sample_envelope(setup.source2, grid), 5.0);
  const double truth = d_param(SpecSheetModel{1313.0, 0.085}, 1560.4);
  const double rel = std::abs(res.estimate.d_ps_nm_km - truth) / truth;
  verdict(4, rel <= 1e-3,
          "noiseless round trip D(1560.4 nm) = " + fmt(res.estimate.d_ps_nm_km) +
              " vs model " + fmt(truth) + " ps/nm/km (relative error " + fmt(rel) +
              ", tolerance 1e-3)");
}

void criterion_noisy_roundtrip() {
  const InterferometerSetup setup = make_setup(780.2, 5.0);
  const FrequencyGrid grid = grid_of(4001, kPi * 10.0);
  const double truth = d_param(SpecSheetModel{1313.0, 0.085}, 1560.4);
  const int n_seeds = 20;
  std::vector<double> dhat, sigma;
  int n_ok = 0;
  for (int k = 0; k < n_seeds; ++k) {
    const NoisyResult r = run_noisy(setup, grid, derive_seed(999, 2 * k + 1),
                                    derive_seed(999, 2 * k + 2), 12.0);
    dhat.push_back(r.estimate.d_ps_nm_km);
    sigma.push_back(r.estimate.sigma_d_ps_nm_km);
    if (std::abs(r.estimate.d_ps_nm_km - truth) / truth <= 0.01) ++n_ok;
  }
  const double scatter = stddev_of(dhat);
  const double reported = mean_of(sigma);
  const double ratio = scatter / reported;
  const bool ok = n_ok >= 18 && ratio >= 0.5 && ratio <= 2.0;
  verdict(5, ok,
          "noisy round trip (340 ps/nm, 256 ps jitter, 1e6 pairs): " +
              std::to_string(n_ok) + "/20 seeds within 1% of " + fmt(truth) +
              "; seed scatter " + fmt(scatter) + " vs reported sigma " + fmt(reported) +
              " (ratio " + fmt(ratio) + ", required 0.5..2)");
}

void criterion_two_pump_slope() {
  const FrequencyGrid grid = grid_of(4001, kPi * 10.0);
  const NoisyResult r1 =
      run_noisy(make_setup(780.2, 5.0), grid, derive_seed(1234, 1), derive_seed(1234, 2), 12.0);
  const NoisyResult r2 =
      run_noisy(make_setup(776.2, 5.0), grid, derive_seed(1234, 3), derive_seed(1234, 4), 12.0);
  const SlopeEstimate s = slope_from_two(r1.estimate, r2.estimate);
  const SpecSheetModel model{1313.0, 0.085};
  const double truth = (d_param(model, 1560.4) - d_param(model, 1552.4)) / 8.0;
  const double err = std::abs(s.s_ps_nm2_km - truth);
  const bool ok = err <= 3.0 * s.sigma_s;
  verdict(6, ok,
          "two-pump slope = " + fmt(s.s_ps_nm2_km) + " +/- " + fmt(s.sigma_s) +
              " vs analytic " + fmt(truth) + " ps/nm^2/km (|err| " + fmt(err) +
              " <= 3 sigma = " + fmt(3.0 * s.sigma_s) + ")");
}

void criterion_properties() {
  int failures = 0;
  std::string detail;
  auto require = [&](bool ok, const char* what) {
    if (!ok) {
      ++failures;
      detail += std::string(detail.empty() ? "" : ", ") + what;
    }
  };

  {
    const FiberSegment fut{SpecSheetModel{1313.0, 0.085}, 5.0, "FUT"};
    const double omega_pump = omega_from_wavelength(780.2);
    bool even = true, linear = true;
    for (double d : {0.7, 4.1, 17.0, 29.0}) {
      const double plus = phi_fut(fut, 0.5 * omega_pump + d, omega_pump);
      const double minus = phi_fut(fut, 0.5 * omega_pump - d, omega_pump);
      even = even && std::abs(plus - minus) <= 1e-12 * std::abs(plus);
      const FiberSegment doubled{SpecSheetModel{1313.0, 0.085}, 10.0, "FUT"};
      linear = linear &&
               std::abs(phi_fut(doubled, 0.5 * omega_pump + d, omega_pump) - 2.0 * plus) <=
                   1e-12 * std::abs(plus);
    }
    require(even, "segment phase evenness");
    require(linear, "segment phase length linearity");
  }

  {
    InterferometerSetup setup = make_setup(780.2, 5.0);
    setup.source2.peak = 1.0;
    const FrequencyGrid grid = grid_of(801, 25.0);
    const Interferogram s = synthesize(setup, grid);
    bool reduces = true;
    for (std::size_t i = 0; i < s.size(); i += 40) {
      const double omega = setup.omega_deg() + s.detuning_radps[i];
      const double f = envelope_value(setup.source1, omega);
      const double expected = 2.0 * f * (1.0 + std::cos(total_phase(setup, omega)));
      reduces = reduces && std::abs(s.values[i] - expected) <= 1e-12 * std::max(1.0, expected);
    }
    require(reduces, "identical-source reduction to 2F(1+cos phi)");
  }

  {
    const SpectrometerConfig c = tof_config(1);
    bool bijective = true;
    for (int i = 0; i <= 50; ++i) {
      const double lambda = 1480.0 + 3.2 * i;
      const double dt = delay_map(c, lambda, 780.2);
      bijective = bijective && std::abs(delay_map(c, inverse_delay_map(c, dt, 780.2), 780.2) -
                                        dt) < 1e-9;
    }
    require(bijective, "delay map bijection");
  }

  {
    const InterferometerSetup setup = make_setup(780.2, 5.0);
    const Interferogram s = synthesize(setup, grid_of(2001, 25.0));
    SpectrometerConfig c = tof_config(77);
    c.pair_count = 2e5;
    const TimeDelayHistogram a = sample_events(s, c, 780.2);
    const TimeDelayHistogram b = sample_events(s, c, 780.2);
    const TimeDelayHistogram ser = sample_events(s, c, 780.2, Exec::serial);
    require(a.counts == b.counts && a.counts == ser.counts,
            "seed determinism and serial/parallel identity");
  }

  {
    const FrequencyGrid grid = grid_of(2001, 25.0);
    const double truth = d_param(SpecSheetModel{1313.0, 0.085}, 1560.4);
    bool invariant = true;
    double first = 0.0;
    for (double length : {2.0, 8.0}) {
      const InterferometerSetup setup = make_setup(780.2, length);
      InterferometerSetup reference = setup;
      reference.fut.reset();
      const ExtractionResult res = extract_dispersion(
          synthesize(setup, grid), synthesize(reference, grid),
          sample_envelope(setup.source1, grid), sample_envelope(setup.source2, grid),
          length);
      invariant = invariant && std::abs(res.estimate.d_ps_nm_km - truth) / truth < 1e-6;
      if (length == 2.0)
        first = res.estimate.d_ps_nm_km;
      else
        invariant = invariant && std::abs(res.estimate.d_ps_nm_km - first) / truth < 1e-8;
    }
    require(invariant, "length-scaling invariance of D");
  }

  {
    SpdcEnvelope e1, e2;
    e1.omega_deg_radps = e2.omega_deg_radps = 1207.0;
    e1.fwhm_radps = e2.fwhm_radps = 40.0;
    bool bounded = true;
    for (double peak : {1.0, 0.47, 0.25, 0.1}) {
      e2.peak = peak;
      for (double d : {0.0, 5.0, 15.0}) {
        const double v = visibility(e1, e2, 1207.0 + d);
        bounded = bounded && v >= 0.0 && v <= 1.0;
      }
    }
    require(bounded, "visibility bounds");
  }

  {
    const InterferometerSetup setup = make_setup(780.2, 5.0);
    const FrequencyGrid grid = grid_of(4001, kPi * 10.0);
    const Interferogram synth = synthesize(setup, grid);
    const Interferogram env1 = sample_envelope(setup.source1, grid);
    const Interferogram env2 = sample_envelope(setup.source2, grid);
    PipelineOptions opts;
    opts.normalize.auto_scale = true;
    opts.fit.window_halfwidth_radps = 8.0;
    double prev = 2.0;
    bool monotone = true;
    for (double jitter : {0.0, 128.0, 256.0, 512.0}) {
      SpectrometerConfig c = tof_config(4242);
      c.jitter_fwhm_ps = jitter;
      const Interferogram meas = histogram_to_spectrum(sample_events(synth, c, 780.2), 780.2);
      const Interferogram e1 = resample_onto(env1, meas.detuning_radps);
      const Interferogram e2 = resample_onto(env2, meas.detuning_radps);
      const RaisedCosineFit fit = fit_raised_cosine(normalize(meas, e1, e2, opts.normalize),
                                                    opts.fit);
      monotone = monotone && fit.visibility <= prev + 0.02;
      prev = fit.visibility;
    }
    require(monotone, "jitter-monotone visibility degradation");
  }

  verdict(7, failures == 0,
          failures == 0 ? "property suite: segment-phase symmetry, interference reduction, "
                          "delay bijection, determinism, length scaling, visibility bounds, "
                          "jitter monotonicity"
                        : "property suite failed: " + detail);
}

void criterion_pointwise_vs_parametric() {
  const double d_truth = d_param(SpecSheetModel{1313.0, 0.085}, 1560.4);
  double worst = 0.0;
  bool ok = true;
  for (double dl_product : {0.002, 0.02, 0.2, 1.0, 2.0}) {
    const double length_m = dl_product / d_truth * 1e3;
    const InterferometerSetup setup = make_setup(780.2, length_m);
    InterferometerSetup reference = setup;
    reference.fut.reset();
    const FrequencyGrid grid = grid_of(16001, kPi * 10.0);
    const Interferogram with = synthesize(setup, grid);
    const Interferogram without = synthesize(reference, grid);
    const Interferogram env1 = sample_envelope(setup.source1, grid);
    const Interferogram env2 = sample_envelope(setup.source2, grid);

    const NormalizedSpectrum norm_with = normalize(with, env1, env2);
    const NormalizedSpectrum norm_without = normalize(without, env1, env2);
    const PhaseTrace pointwise = subtract_reference(extract_phase_pointwise(norm_with),
                                                    extract_phase_pointwise(norm_without));
    const SubtractedCoefficients coeffs = subtract_reference(
        fit_raised_cosine(norm_with), fit_raised_cosine(norm_without));
    const PhaseTrace parametric =
        phase_from_coefficients(coeffs, pointwise.detuning_radps, 1560.4);

    double worst_here = 0.0;
    for (std::size_t i = 0; i < pointwise.detuning_radps.size(); ++i) {
      if (!pointwise.mask[i]) continue;
      worst_here =
          std::max(worst_here, std::abs(pointwise.phase_rad[i] - parametric.phase_rad[i]));
    }
    worst = std::max(worst, worst_here);
    ok = ok && worst_here < 0.01;
  }
  verdict(8, ok,
          "pointwise vs parametric phase over dispersion-length products 0.002..2 ps/nm: "
          "max |dPhi| = " +
              fmt(worst) + " rad (required < 0.01)");
}

}  // namespace

int main() {
  criterion_resolution();
  criterion_slope_formula();
  criterion_sensitivity();
  criterion_noiseless_roundtrip();
  criterion_noisy_roundtrip();
  criterion_two_pump_slope();
  criterion_properties();
  criterion_pointwise_vs_parametric();
  std::printf("%s\n", g_all_ok ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL");
  return g_all_ok ? 0 : 1;
}
