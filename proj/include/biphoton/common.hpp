#pragma once

#include <cstdint>
#include <numbers>
#include <stdexcept>

// Unit conventions used throughout:
//   wavelength  nm          angular frequency  rad/ps      frequency  THz
//   time        ps          fiber length       m
//   D           ps/(nm km)  dispersion slope   ps/(nm^2 km)
//   k2          ps^2/km     k3 ps^3/km         k4 ps^4/km
// Detuning delta = omega - omega_deg, where omega_deg = omega_pump / 2 is the
// degenerate (half-pump) frequency and lambda_deg = 2 * lambda_pump.

namespace biphoton {

inline constexpr double kSpeedOfLight = 299792.458;  // nm/ps, exact
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kPi = std::numbers::pi;

inline double omega_from_wavelength(double lambda_nm) {
  if (!(lambda_nm > 0.0))
    throw std::invalid_argument("omega_from_wavelength: wavelength must be positive");
  return kTwoPi * kSpeedOfLight / lambda_nm;
}

inline double wavelength_from_omega(double omega_radps) {
  if (!(omega_radps > 0.0))
    throw std::invalid_argument("wavelength_from_omega: frequency must be positive");
  return kTwoPi * kSpeedOfLight / omega_radps;
}

// 1 THz = 2*pi rad/ps
inline double radps_from_thz(double f_thz) { return kTwoPi * f_thz; }
inline double thz_from_radps(double omega) { return omega / kTwoPi; }

// Execution policy for the hot loops. Serial is the reference implementation;
// parallel must produce bit-identical results (asserted in tests).
enum class Exec { serial, parallel };

// splitmix64 step, used to derive stream seeds from (master, index) so that
// sharded sampling and bootstrap replicas are deterministic regardless of
// thread count.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace biphoton
