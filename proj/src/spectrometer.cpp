#include "biphoton/spectrometer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace biphoton {

namespace {

constexpr double kFwhmToSigma = 1.0 / 2.3548;
constexpr std::uint64_t kShardEvents = 65536;

struct Window {
  double lambda_lo, lambda_hi;  // calibrated wavelength window
  double t_lo, t_hi;            // mapped delay range (sorted)
};

Window mapped_window(const SpectrometerConfig& config, double lambda_pump_nm) {
  const double lambda_deg = 2.0 * lambda_pump_nm;
  Window w;
  w.lambda_lo = lambda_deg - config.window_halfwidth_nm;
  w.lambda_hi = lambda_deg + config.window_halfwidth_nm;
  if (!(w.lambda_lo > lambda_pump_nm))
    throw std::out_of_range("spectrometer: window reaches below the pump wavelength");
  const double ta = delay_map(config, w.lambda_lo, lambda_pump_nm);
  const double tb = delay_map(config, w.lambda_hi, lambda_pump_nm);
  w.t_lo = std::min(ta, tb);
  w.t_hi = std::max(ta, tb);
  return w;
}

double conjugate_wavelength(double lambda_signal_nm, double lambda_pump_nm) {
  const double inv_i = 1.0 / lambda_pump_nm - 1.0 / lambda_signal_nm;
  if (!(inv_i > 0.0))
    throw std::out_of_range("spectrometer: no energy-conserving idler for this signal");
  return 1.0 / inv_i;
}

void check_spectrum(const Interferogram& spectrum) {
  const std::size_t n = spectrum.size();
  if (n < 2 || spectrum.values.size() != n)
    throw std::invalid_argument("sample_events: spectrum needs >= 2 aligned points");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(spectrum.values[i]) || spectrum.values[i] < 0.0)
      throw std::invalid_argument("sample_events: spectrum values must be finite and >= 0");
    if (i > 0 && !(spectrum.detuning_radps[i] > spectrum.detuning_radps[i - 1]))
      throw std::invalid_argument("sample_events: detuning axis must be strictly increasing");
    total += spectrum.values[i];
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_events: zero-weight spectrum");
}

}  // namespace

double SpectrometerConfig::effective_jitter_fwhm_ps() const {
  if (jitter_fwhm_ps > 0.0) return jitter_fwhm_ps;
  return std::hypot(detector1_jitter_fwhm_ps, detector2_jitter_fwhm_ps);
}

void validate(const SpectrometerConfig& config) {
  if (!(config.medium_dl_ps_per_nm != 0.0) || !std::isfinite(config.medium_dl_ps_per_nm))
    throw std::invalid_argument("SpectrometerConfig: medium_dl must be nonzero");
  if (!(config.jitter_fwhm_ps >= 0.0) || !(config.detector1_jitter_fwhm_ps >= 0.0) ||
      !(config.detector2_jitter_fwhm_ps >= 0.0))
    throw std::invalid_argument("SpectrometerConfig: jitter must be >= 0");
  if (!(config.bin_width_ps > 0.0))
    throw std::invalid_argument("SpectrometerConfig: bin_width must be positive");
  if (!(config.pair_count > 0.0))
    throw std::invalid_argument("SpectrometerConfig: pair_count must be positive");
  if (!(config.dark_fraction >= 0.0 && config.dark_fraction < 1.0))
    throw std::invalid_argument("SpectrometerConfig: dark_fraction must be in [0, 1)");
  if (!(config.window_halfwidth_nm > 0.0))
    throw std::invalid_argument("SpectrometerConfig: window_halfwidth must be positive");
}

double delay_map(const SpectrometerConfig& config, double lambda_signal_nm,
                 double lambda_pump_nm) {
  validate(config);
  if (!(lambda_pump_nm > 0.0))
    throw std::invalid_argument("delay_map: pump wavelength must be positive");
  const double lambda_deg = 2.0 * lambda_pump_nm;
  if (std::abs(lambda_signal_nm - lambda_deg) > config.window_halfwidth_nm)
    throw std::out_of_range("delay_map: wavelength outside the calibrated window");
  const double lambda_idler = conjugate_wavelength(lambda_signal_nm, lambda_pump_nm);
  return config.medium_dl_ps_per_nm * (lambda_signal_nm - lambda_idler);
}

double inverse_delay_map(const SpectrometerConfig& config, double dt_ps,
                         double lambda_pump_nm) {
  validate(config);
  const Window w = mapped_window(config, lambda_pump_nm);
  if (!(dt_ps >= w.t_lo && dt_ps <= w.t_hi))
    throw std::out_of_range("inverse_delay_map: delay outside the mapped window");
  const bool increasing = config.medium_dl_ps_per_nm > 0.0;
  double lo = w.lambda_lo, hi = w.lambda_hi;
  for (int iter = 0; iter < 200 && hi - lo > 0.0; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double t = delay_map(config, mid, lambda_pump_nm);
    if ((t < dt_ps) == increasing)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double resolution(const SpectrometerConfig& config) {
  validate(config);
  return std::max(config.effective_jitter_fwhm_ps(), config.bin_width_ps) /
         std::abs(config.medium_dl_ps_per_nm);
}

TimeDelayHistogram sample_events(const Interferogram& spectrum,
                                 const SpectrometerConfig& config,
                                 double lambda_pump_nm, Exec exec) {
  validate(config);
  check_spectrum(spectrum);
  const Window w = mapped_window(config, lambda_pump_nm);
  const double omega_p = omega_from_wavelength(lambda_pump_nm);

  const std::size_t n = spectrum.size();
  std::vector<double> delay(n);  // delta_t at each grid point
  for (std::size_t i = 0; i < n; ++i) {
    const double omega_s = 0.5 * omega_p + spectrum.detuning_radps[i];
    delay[i] = delay_map(config, wavelength_from_omega(omega_s), lambda_pump_nm);
  }

  // Trapezoid weight per grid cell, cumulative for inverse-CDF sampling.
  std::vector<double> cum(n - 1);
  double total_weight = 0.0;
  for (std::size_t c = 0; c + 1 < n; ++c) {
    const double width = spectrum.detuning_radps[c + 1] - spectrum.detuning_radps[c];
    total_weight += 0.5 * (spectrum.values[c] + spectrum.values[c + 1]) * width;
    cum[c] = total_weight;
  }
  if (!(total_weight > 0.0))
    throw std::invalid_argument("sample_events: zero-weight spectrum");

  // Histogram span: the mapped extent of the grid, snapped outward to whole
  // bins but kept inside the calibrated window.
  const double t_grid_lo = std::min(delay.front(), delay.back());
  const double t_grid_hi = std::max(delay.front(), delay.back());
  const double bw = config.bin_width_ps;
  double t_start = std::floor(t_grid_lo / bw) * bw;
  if (t_start < w.t_lo) t_start += bw;
  std::size_t n_bins = static_cast<std::size_t>(std::ceil((t_grid_hi - t_start) / bw));
  if (n_bins == 0) n_bins = 1;
  while (t_start + static_cast<double>(n_bins) * bw > w.t_hi && n_bins > 1) --n_bins;
  const double t_end = t_start + static_cast<double>(n_bins) * bw;

  std::mt19937_64 master(derive_seed(config.rng_seed, 0));
  const auto n_events = std::poisson_distribution<long long>(config.pair_count)(master);
  const std::uint64_t total_events = static_cast<std::uint64_t>(std::max<long long>(n_events, 0));
  const std::uint64_t n_shards = (total_events + kShardEvents - 1) / kShardEvents;

  const double sigma_jitter = config.effective_jitter_fwhm_ps() * kFwhmToSigma;

  TimeDelayHistogram hist;
  hist.t_start_ps = t_start;
  hist.bin_width_ps = bw;
  hist.counts.assign(n_bins, 0);
  hist.config = config;
  hist.pump_wavelength_nm = lambda_pump_nm;
  hist.source_setup_hash = spectrum.setup_hash;
  hist.source_with_fut = spectrum.with_fut;

  std::uint64_t dropped_total = 0;
  const bool par = exec == Exec::parallel;
  const auto n_shards_s = static_cast<std::ptrdiff_t>(n_shards);

#pragma omp parallel if (par)
  {
    std::vector<std::uint64_t> local(n_bins, 0);
    std::uint64_t local_dropped = 0;

#pragma omp for schedule(static) nowait
    for (std::ptrdiff_t shard = 0; shard < n_shards_s; ++shard) {
      std::mt19937_64 rng(derive_seed(config.rng_seed, static_cast<std::uint64_t>(shard) + 1));
      std::uniform_real_distribution<double> uni01(0.0, 1.0);
      std::normal_distribution<double> jitter(0.0, sigma_jitter > 0.0 ? sigma_jitter : 1.0);
      const std::uint64_t first = static_cast<std::uint64_t>(shard) * kShardEvents;
      const std::uint64_t quota = std::min(kShardEvents, total_events - first);
      for (std::uint64_t e = 0; e < quota; ++e) {
        double t;
        if (config.dark_fraction > 0.0 && uni01(rng) < config.dark_fraction) {
          t = t_start + uni01(rng) * (t_end - t_start);
        } else {
          const double target = uni01(rng) * total_weight;
          const auto it = std::lower_bound(cum.begin(), cum.end(), target);
          std::size_t c = static_cast<std::size_t>(it - cum.begin());
          if (c >= cum.size()) c = cum.size() - 1;
          const double frac = uni01(rng);
          const double delta = spectrum.detuning_radps[c] +
                               frac * (spectrum.detuning_radps[c + 1] - spectrum.detuning_radps[c]);
          const double omega_s = 0.5 * omega_p + delta;
          t = delay_map(config, wavelength_from_omega(omega_s), lambda_pump_nm);
          if (sigma_jitter > 0.0) t += jitter(rng);
        }
        const double pos = (t - t_start) / bw;
        if (pos >= 0.0 && pos < static_cast<double>(n_bins))
          ++local[static_cast<std::size_t>(pos)];
        else
          ++local_dropped;
      }
    }

#pragma omp critical
    {
      for (std::size_t b = 0; b < n_bins; ++b) hist.counts[b] += local[b];
      dropped_total += local_dropped;
    }
  }

  hist.dropped = dropped_total;
  std::uint64_t sum = 0;
  for (auto c : hist.counts) sum += c;
  hist.total_counts = sum;
  return hist;
}

Interferogram histogram_to_spectrum(const TimeDelayHistogram& hist,
                                    double lambda_pump_nm) {
  if (hist.counts.empty())
    throw std::invalid_argument("histogram_to_spectrum: empty histogram");
  if (!(hist.bin_width_ps > 0.0))
    throw std::invalid_argument("histogram_to_spectrum: bin width must be positive");
  const SpectrometerConfig& config = hist.config;
  validate(config);
  const Window w = mapped_window(config, lambda_pump_nm);
  const double omega_p = omega_from_wavelength(lambda_pump_nm);
  const double omega_deg = 0.5 * omega_p;

  const std::size_t n_bins = hist.size();
  Interferogram out;
  out.detuning_radps.reserve(n_bins);
  out.values.reserve(n_bins);
  out.sigma.reserve(n_bins);
  out.counts.reserve(n_bins);

  // Fill in increasing-detuning order: increasing delta_t corresponds to
  // decreasing detuning when medium_dl > 0.
  const bool reverse = config.medium_dl_ps_per_nm > 0.0;
  for (std::size_t k = 0; k < n_bins; ++k) {
    const std::size_t i = reverse ? n_bins - 1 - k : k;
    const double t = hist.bin_center(i);
    if (!(t >= w.t_lo && t <= w.t_hi)) continue;
    const double lambda_s = inverse_delay_map(config, t, lambda_pump_nm);
    const double omega_s = omega_from_wavelength(lambda_s);
    const double omega_i = omega_p - omega_s;
    const double jac = std::abs(config.medium_dl_ps_per_nm) * kTwoPi * kSpeedOfLight *
                       (1.0 / (omega_s * omega_s) + 1.0 / (omega_i * omega_i));
    const double scale = jac / hist.bin_width_ps;
    const double c = static_cast<double>(hist.counts[i]);
    out.detuning_radps.push_back(omega_s - omega_deg);
    out.values.push_back(c * scale);
    out.sigma.push_back(std::sqrt(std::max(c, 1.0)) * scale);
    out.counts.push_back(c);
  }
  if (out.detuning_radps.empty())
    throw std::invalid_argument("histogram_to_spectrum: no bins inside the mapped window");

  out.pump_wavelength_nm = lambda_pump_nm;
  out.lambda_deg_nm = 2.0 * lambda_pump_nm;
  out.setup_hash = hist.source_setup_hash;
  out.with_fut = hist.source_with_fut;
  out.coherence_ok = true;
  out.origin = "spectrometer";
  return out;
}

}  // namespace biphoton
