#include "biphoton/dispersion.hpp"

#include <algorithm>
#include <cmath>

namespace biphoton {

namespace {

void check_spec_sheet(const SpecSheetModel& m) {
  if (!(m.lambda0_nm > 0.0) || !std::isfinite(m.lambda0_nm))
    throw std::invalid_argument("SpecSheetModel: lambda0 must be positive");
  if (!(m.s0_ps_nm2_km > 0.0) || !std::isfinite(m.s0_ps_nm2_km))
    throw std::invalid_argument("SpecSheetModel: S0 must be positive");
}

void check_spec_sheet_range(double lambda_nm) {
  if (!(lambda_nm >= kSpecSheetLambdaMin && lambda_nm <= kSpecSheetLambdaMax))
    throw std::out_of_range("SpecSheetModel: wavelength outside [1200, 1700] nm");
}

void check_tabulated(const TabulatedDModel& m) {
  if (m.lambda_nm.size() < 2 || m.lambda_nm.size() != m.d_ps_nm_km.size())
    throw std::invalid_argument("TabulatedDModel: need >= 2 matching samples");
  for (std::size_t i = 1; i < m.lambda_nm.size(); ++i)
    if (!(m.lambda_nm[i] > m.lambda_nm[i - 1]))
      throw std::invalid_argument("TabulatedDModel: wavelengths must be strictly increasing");
}

// Index of the interpolation segment containing lambda.
std::size_t tabulated_segment(const TabulatedDModel& m, double lambda_nm) {
  check_tabulated(m);
  if (!(lambda_nm >= m.lambda_nm.front() && lambda_nm <= m.lambda_nm.back()))
    throw std::out_of_range("TabulatedDModel: wavelength outside tabulated range");
  auto it = std::upper_bound(m.lambda_nm.begin(), m.lambda_nm.end(), lambda_nm);
  std::size_t hi = static_cast<std::size_t>(it - m.lambda_nm.begin());
  if (hi == m.lambda_nm.size()) --hi;
  if (hi == 0) ++hi;
  return hi - 1;
}

}  // namespace

double d_param(const DispersionModel& model, double lambda_nm) {
  if (!std::isfinite(lambda_nm) || !(lambda_nm > 0.0))
    throw std::invalid_argument("d_param: wavelength must be positive");
  return std::visit(
      [lambda_nm](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, SpecSheetModel>) {
          check_spec_sheet(m);
          check_spec_sheet_range(lambda_nm);
          const double l0_4 = std::pow(m.lambda0_nm, 4);
          return m.s0_ps_nm2_km / 4.0 *
                 (lambda_nm - l0_4 / (lambda_nm * lambda_nm * lambda_nm));
        } else if constexpr (std::is_same_v<T, TaylorBetaModel>) {
          return d_from_k2(k2_at(m, omega_from_wavelength(lambda_nm)), lambda_nm);
        } else {
          std::size_t s = tabulated_segment(m, lambda_nm);
          const double t = (lambda_nm - m.lambda_nm[s]) /
                           (m.lambda_nm[s + 1] - m.lambda_nm[s]);
          return m.d_ps_nm_km[s] * (1.0 - t) + m.d_ps_nm_km[s + 1] * t;
        }
      },
      model);
}

double dispersion_slope(const DispersionModel& model, double lambda_nm) {
  if (!std::isfinite(lambda_nm) || !(lambda_nm > 0.0))
    throw std::invalid_argument("dispersion_slope: wavelength must be positive");
  return std::visit(
      [lambda_nm](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, SpecSheetModel>) {
          check_spec_sheet(m);
          check_spec_sheet_range(lambda_nm);
          const double r4 = std::pow(m.lambda0_nm / lambda_nm, 4);
          return m.s0_ps_nm2_km / 4.0 * (1.0 + 3.0 * r4);
        } else if constexpr (std::is_same_v<T, TaylorBetaModel>) {
          // D(lambda) = -(2 pi c / lambda^2) K(omega(lambda)) with
          // K = local k2; chain rule with domega/dlambda = -2 pi c / lambda^2.
          const double omega = omega_from_wavelength(lambda_nm);
          const double u = kTwoPi * kSpeedOfLight / (lambda_nm * lambda_nm);
          const double dd = omega - m.omega_ref_radps;
          const double k2 = m.k2_ps2_km + m.k3_ps3_km * dd + 0.5 * m.k4_ps4_km * dd * dd;
          const double dk2 = m.k3_ps3_km + m.k4_ps4_km * dd;
          return 2.0 * u / lambda_nm * k2 + u * u * dk2;
        } else {
          std::size_t s = tabulated_segment(m, lambda_nm);
          return (m.d_ps_nm_km[s + 1] - m.d_ps_nm_km[s]) /
                 (m.lambda_nm[s + 1] - m.lambda_nm[s]);
        }
      },
      model);
}

double k2_from_d(double d_ps_nm_km, double lambda_nm) {
  if (!(lambda_nm > 0.0))
    throw std::invalid_argument("k2_from_d: wavelength must be positive");
  return -d_ps_nm_km * lambda_nm * lambda_nm / (kTwoPi * kSpeedOfLight);
}

double d_from_k2(double k2_ps2_km, double lambda_nm) {
  if (!(lambda_nm > 0.0))
    throw std::invalid_argument("d_from_k2: wavelength must be positive");
  return -k2_ps2_km * kTwoPi * kSpeedOfLight / (lambda_nm * lambda_nm);
}

double k2_at(const DispersionModel& model, double omega_radps) {
  if (!(omega_radps > 0.0))
    throw std::invalid_argument("k2_at: frequency must be positive");
  if (const auto* t = std::get_if<TaylorBetaModel>(&model)) {
    const double dd = omega_radps - t->omega_ref_radps;
    return t->k2_ps2_km + t->k3_ps3_km * dd + 0.5 * t->k4_ps4_km * dd * dd;
  }
  const double lambda = wavelength_from_omega(omega_radps);
  return k2_from_d(d_param(model, lambda), lambda);
}

double k4_of(const DispersionModel& model) {
  if (const auto* t = std::get_if<TaylorBetaModel>(&model)) return t->k4_ps4_km;
  return 0.0;
}

double phi_fut(const FiberSegment& segment, double omega_radps,
               double omega_pump_radps, bool include_offset, double phi0_rad) {
  if (!(omega_pump_radps > 0.0))
    throw std::invalid_argument("phi_fut: pump frequency must be positive");
  if (!(segment.length_m >= 0.0) || !std::isfinite(segment.length_m))
    throw std::invalid_argument("phi_fut: segment length must be >= 0");
  const double omega_deg = 0.5 * omega_pump_radps;
  const double delta = omega_radps - omega_deg;
  const double k2 = k2_at(segment.model, omega_deg);
  const double k4 = k4_of(segment.model);
  const double d2 = delta * delta;
  const double length_km = segment.length_m * 1e-3;
  double phi = -(k2 * d2 + k4 / 12.0 * d2 * d2) * length_km;
  if (include_offset) phi += phi0_rad;
  return phi;
}

}  // namespace biphoton
