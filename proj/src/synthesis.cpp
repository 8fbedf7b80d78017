#include "biphoton/synthesis.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace biphoton {

namespace {

constexpr double kFourLn2 = 2.772588722239781;  // 4 ln 2

void check_envelope(const SpdcEnvelope& env) {
  if (!(env.fwhm_radps > 0.0) || !std::isfinite(env.fwhm_radps))
    throw std::invalid_argument("SpdcEnvelope: fwhm must be positive");
  if (!(env.peak > 0.0) || !std::isfinite(env.peak))
    throw std::invalid_argument("SpdcEnvelope: peak must be positive");
  if (!(env.omega_deg_radps > 0.0))
    throw std::invalid_argument("SpdcEnvelope: omega_deg must be positive");
}

double sinc(double x) {
  if (std::abs(x) < 1e-8) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

void fnv_double(std::uint64_t& h, double v) {
  if (v == 0.0) v = 0.0;  // collapse -0
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  fnv_mix(h, &bits, sizeof bits);
}

void fnv_envelope(std::uint64_t& h, const SpdcEnvelope& e) {
  fnv_double(h, e.omega_deg_radps);
  fnv_double(h, e.fwhm_radps);
  fnv_double(h, static_cast<double>(e.shape));
  fnv_double(h, e.peak);
}

void fnv_model(std::uint64_t& h, const DispersionModel& m) {
  fnv_double(h, static_cast<double>(m.index()));
  std::visit(
      [&h](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SpecSheetModel>) {
          fnv_double(h, v.lambda0_nm);
          fnv_double(h, v.s0_ps_nm2_km);
        } else if constexpr (std::is_same_v<T, TaylorBetaModel>) {
          fnv_double(h, v.omega_ref_radps);
          fnv_double(h, v.k2_ps2_km);
          fnv_double(h, v.k3_ps3_km);
          fnv_double(h, v.k4_ps4_km);
        } else {
          for (double x : v.lambda_nm) fnv_double(h, x);
          for (double x : v.d_ps_nm_km) fnv_double(h, x);
        }
      },
      m);
}

}  // namespace

double envelope_value(const SpdcEnvelope& env, double omega_radps) {
  check_envelope(env);
  const double delta = omega_radps - env.omega_deg_radps;
  switch (env.shape) {
    case EnvelopeShape::gaussian:
      return env.peak * std::exp(-kFourLn2 * delta * delta / (env.fwhm_radps * env.fwhm_radps));
    case EnvelopeShape::sinc2: {
      const double s = sinc(2.0 * kSinc2HalfPoint * delta / env.fwhm_radps);
      return env.peak * s * s;
    }
  }
  throw std::logic_error("envelope_value: unknown shape");
}

std::vector<double> FrequencyGrid::points() const {
  if (n_points < 2)
    throw std::invalid_argument("FrequencyGrid: need at least 2 points");
  if (!(delta_max_radps > delta_min_radps))
    throw std::invalid_argument("FrequencyGrid: delta_max must exceed delta_min");
  std::vector<double> d(static_cast<std::size_t>(n_points));
  const double n1 = static_cast<double>(n_points - 1);
  if (delta_min_radps == -delta_max_radps) {
    for (int i = 0; i < n_points; ++i)
      d[static_cast<std::size_t>(i)] = delta_max_radps * (2.0 * i - n1) / n1;
  } else {
    const double step = (delta_max_radps - delta_min_radps) / n1;
    for (int i = 0; i < n_points; ++i)
      d[static_cast<std::size_t>(i)] = delta_min_radps + step * i;
    d.back() = delta_max_radps;
  }
  return d;
}

CoherenceResult coherence_check(double pump_linewidth_mhz, double path_mismatch_m,
                                double group_index) {
  if (!(pump_linewidth_mhz > 0.0))
    throw std::invalid_argument("coherence_check: linewidth must be positive");
  if (!(path_mismatch_m >= 0.0))
    throw std::invalid_argument("coherence_check: path mismatch must be >= 0");
  if (!(group_index >= 1.0))
    throw std::invalid_argument("coherence_check: group index must be >= 1");
  const double c_m_per_s = 299792458.0;
  const double dnu_hz = pump_linewidth_mhz * 1e6;
  CoherenceResult r;
  r.coherence_length_m = c_m_per_s / group_index / (kPi * dnu_hz);
  r.ratio = path_mismatch_m == 0.0 ? std::numeric_limits<double>::infinity()
                                   : r.coherence_length_m / path_mismatch_m;
  r.pass = r.ratio >= 100.0;
  return r;
}

double total_phase(const InterferometerSetup& setup, double omega_radps) {
  const double omega_p = setup.omega_pump();
  const double delta = omega_radps - 0.5 * omega_p;
  const double d2 = delta * delta;
  double phi = setup.internal_poly.c0_rad + setup.internal_poly.c2_rad_ps2 * d2 +
               setup.internal_poly.c4_rad_ps4 * d2 * d2;
  for (const auto& seg : setup.internal_segments)
    phi += phi_fut(seg, omega_radps, omega_p);
  if (setup.fut) phi += phi_fut(*setup.fut, omega_radps, omega_p);
  return phi;
}

Interferogram synthesize(const InterferometerSetup& setup, const FrequencyGrid& grid,
                         Exec exec) {
  check_envelope(setup.source1);
  check_envelope(setup.source2);
  const double omega_deg = setup.omega_deg();
  Interferogram out;
  out.detuning_radps = grid.points();
  out.values.resize(out.detuning_radps.size());
  out.pump_wavelength_nm = setup.pump_wavelength_nm;
  out.lambda_deg_nm = setup.lambda_deg();
  out.setup_hash = setup_fingerprint(setup);
  out.with_fut = setup.fut.has_value();
  out.coherence_ok = coherence_check(setup.pump_linewidth_mhz, setup.path_mismatch_m).pass;
  out.origin = "synthesize";

  const auto n = static_cast<std::ptrdiff_t>(out.detuning_radps.size());
  const bool par = exec == Exec::parallel;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double omega = omega_deg + out.detuning_radps[static_cast<std::size_t>(i)];
    const double f1 = envelope_value(setup.source1, omega);
    const double f2 = envelope_value(setup.source2, omega);
    const double phi = total_phase(setup, omega);
    out.values[static_cast<std::size_t>(i)] =
        f1 + f2 + 2.0 * std::sqrt(f1 * f2) * std::cos(phi);
  }
  return out;
}

Interferogram sample_envelope(const SpdcEnvelope& env, const FrequencyGrid& grid) {
  check_envelope(env);
  Interferogram out;
  out.detuning_radps = grid.points();
  out.values.resize(out.detuning_radps.size());
  for (std::size_t i = 0; i < out.detuning_radps.size(); ++i)
    out.values[i] = envelope_value(env, env.omega_deg_radps + out.detuning_radps[i]);
  out.lambda_deg_nm = wavelength_from_omega(env.omega_deg_radps);
  out.pump_wavelength_nm = 0.5 * out.lambda_deg_nm;
  out.with_fut = false;
  out.coherence_ok = true;
  out.origin = "synthesize";
  return out;
}

double visibility(const SpdcEnvelope& env1, const SpdcEnvelope& env2,
                  double omega_radps) {
  const double f1 = envelope_value(env1, omega_radps);
  const double f2 = envelope_value(env2, omega_radps);
  const double sum = f1 + f2;
  if (!(sum > 0.0))
    throw std::domain_error("visibility: both envelopes vanish at this frequency");
  return 2.0 * std::sqrt(f1 * f2) / sum;
}

std::uint64_t setup_fingerprint(const InterferometerSetup& setup) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  fnv_double(h, setup.pump_wavelength_nm);
  fnv_envelope(h, setup.source1);
  fnv_envelope(h, setup.source2);
  fnv_double(h, static_cast<double>(setup.internal_segments.size()));
  for (const auto& seg : setup.internal_segments) {
    fnv_model(h, seg.model);
    fnv_double(h, seg.length_m);
  }
  fnv_double(h, setup.internal_poly.c0_rad);
  fnv_double(h, setup.internal_poly.c2_rad_ps2);
  fnv_double(h, setup.internal_poly.c4_rad_ps4);
  fnv_double(h, setup.fut ? 1.0 : 0.0);
  if (setup.fut) {
    fnv_model(h, setup.fut->model);
    fnv_double(h, setup.fut->length_m);
  }
  fnv_double(h, setup.pump_linewidth_mhz);
  fnv_double(h, setup.path_mismatch_m);
  return h;
}

}  // namespace biphoton
