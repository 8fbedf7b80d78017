#include <chrono>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "biphoton/extraction.hpp"
#include "biphoton/spectrometer.hpp"
#include "biphoton/synthesis.hpp"

using namespace biphoton;

namespace {

InterferometerSetup demo_setup(double pump_nm) {
  InterferometerSetup s;
  s.pump_wavelength_nm = pump_nm;
  const double omega_deg = 0.5 * omega_from_wavelength(pump_nm);
  for (SpdcEnvelope* env : {&s.source1, &s.source2}) {
    env->omega_deg_radps = omega_deg;
    env->fwhm_radps = radps_from_thz(9.0);
    env->shape = EnvelopeShape::gaussian;
    env->peak = 1.0;
  }
  s.internal_poly = {0.4, 0.18, 0.0};
  s.internal_segments.push_back(
      {SpecSheetModel{1313.0, 0.085}, 0.5, "internal patch"});
  s.fut = FiberSegment{SpecSheetModel{1313.0, 0.085}, 5.0, "FUT"};
  return s;
}

template <typename F>
double time_ms(F&& fn, int repeats) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-22s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   %s\n", name,
              serial_ms, parallel_ms, serial_ms / parallel_ms,
              identical ? "outputs identical" : "OUTPUTS DIFFER");
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP not available; parallel paths run serially\n");
#endif

  const InterferometerSetup setup = demo_setup(780.2);
  FrequencyGrid grid;
  grid.delta_min_radps = -kPi * 10.0;
  grid.delta_max_radps = kPi * 10.0;
  grid.n_points = 200001;

  Interferogram synth_serial, synth_parallel;
  const double synth_s = time_ms([&] { synth_serial = synthesize(setup, grid, Exec::serial); }, 5);
  const double synth_p =
      time_ms([&] { synth_parallel = synthesize(setup, grid, Exec::parallel); }, 5);
  report("synthesize", synth_s, synth_p,
         synth_serial.values == synth_parallel.values);

  grid.n_points = 4001;
  const Interferogram spectrum = synthesize(setup, grid);
  SpectrometerConfig sc;
  sc.pair_count = 4e6;
  sc.rng_seed = 7;
  TimeDelayHistogram hist_serial, hist_parallel;
  const double samp_s = time_ms(
      [&] { hist_serial = sample_events(spectrum, sc, 780.2, Exec::serial); }, 3);
  const double samp_p = time_ms(
      [&] { hist_parallel = sample_events(spectrum, sc, 780.2, Exec::parallel); }, 3);
  report("sample_events", samp_s, samp_p, hist_serial.counts == hist_parallel.counts);

  InterferometerSetup reference = setup;
  reference.fut.reset();
  const Interferogram without = synthesize(reference, grid);
  const Interferogram env1 = sample_envelope(setup.source1, grid);
  const Interferogram env2 = sample_envelope(setup.source2, grid);
  const Interferogram meas_with =
      histogram_to_spectrum(sample_events(spectrum, sc, 780.2), 780.2);
  sc.rng_seed = 8;
  const Interferogram meas_without =
      histogram_to_spectrum(sample_events(without, sc, 780.2), 780.2);

  PipelineOptions opts;
  opts.normalize.auto_scale = true;
  opts.fit.window_halfwidth_radps = 12.0;
  BootstrapOptions boot;
  boot.n_resamples = 64;
  boot.seed = 11;
  DispersionEstimate boot_serial, boot_parallel;
  const double boot_s = time_ms(
      [&] {
        boot_serial = bootstrap_uncertainty(meas_with, meas_without, env1, env2, 5.0, opts,
                                            boot, Exec::serial);
      },
      1);
  const double boot_p = time_ms(
      [&] {
        boot_parallel = bootstrap_uncertainty(meas_with, meas_without, env1, env2, 5.0,
                                              opts, boot, Exec::parallel);
      },
      1);
  report("bootstrap_uncertainty", boot_s, boot_p,
         boot_serial.sigma_d_bootstrap == boot_parallel.sigma_d_bootstrap);
  return 0;
}
