#pragma once

#include <string>
#include <variant>
#include <vector>

#include "biphoton/common.hpp"

namespace biphoton {

// Chromatic dispersion of a fiber, one of three parameterizations.

// Data-sheet form D(lambda) = S0/4 * (lambda - lambda0^4 / lambda^3),
// valid on [1200, 1700] nm (enforced).
struct SpecSheetModel {
  double lambda0_nm = 0.0;     // zero-dispersion wavelength
  double s0_ps_nm2_km = 0.0;   // zero-dispersion slope
};

// Taylor expansion of the propagation constant around omega_ref:
// local k2(omega) = k2 + k3*(omega-omega_ref) + k4/2*(omega-omega_ref)^2.
struct TaylorBetaModel {
  double omega_ref_radps = 0.0;
  double k2_ps2_km = 0.0;
  double k3_ps3_km = 0.0;
  double k4_ps4_km = 0.0;
};

// Measured D samples, linearly interpolated; out-of-range queries are errors.
struct TabulatedDModel {
  std::vector<double> lambda_nm;     // strictly increasing, size >= 2
  std::vector<double> d_ps_nm_km;    // matching size
};

using DispersionModel = std::variant<SpecSheetModel, TaylorBetaModel, TabulatedDModel>;

struct FiberSegment {
  DispersionModel model;
  double length_m = 0.0;
  std::string label;
};

inline constexpr double kSpecSheetLambdaMin = 1200.0;
inline constexpr double kSpecSheetLambdaMax = 1700.0;

// D(lambda) in ps/(nm km). Throws std::out_of_range outside model validity,
// std::invalid_argument for malformed models.
double d_param(const DispersionModel& model, double lambda_nm);

// dD/dlambda in ps/(nm^2 km). Analytic for SpecSheet and TaylorBeta,
// segment slope of the interpolant for TabulatedD.
double dispersion_slope(const DispersionModel& model, double lambda_nm);

// Exact D <-> k2 conversion at a wavelength: k2 = -D * lambda^2 / (2 pi c).
double k2_from_d(double d_ps_nm_km, double lambda_nm);
double d_from_k2(double k2_ps2_km, double lambda_nm);

// Local group-velocity-dispersion coefficient k2(omega) in ps^2/km.
double k2_at(const DispersionModel& model, double omega_radps);

// Fourth-order coefficient in ps^4/km (nonzero only for TaylorBetaModel).
double k4_of(const DispersionModel& model);

// Two-photon spectral phase acquired in one segment of a common-path
// nonlinear interferometer. Odd dispersion orders cancel between signal and
// idler, leaving
//   phi(delta) = phi0 - (k2(omega_deg) * delta^2 + k4/12 * delta^4) * L
// with delta = omega - omega_pump/2 and L in km. Even in delta, linear in
// segment length. phi0 is added only when include_offset is set.
double phi_fut(const FiberSegment& segment, double omega_radps,
               double omega_pump_radps, bool include_offset = false,
               double phi0_rad = 0.0);

}  // namespace biphoton
