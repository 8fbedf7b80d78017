#include <cmath>
#include <stdexcept>

#include "biphoton/dispersion.hpp"
#include "doctest.h"

using namespace biphoton;

namespace {
const SpecSheetModel kSmf28{1313.0, 0.085};
}

TEST_CASE("data-sheet dispersion matches hand-computed values") {
  CHECK(d_param(kSmf28, 1560.4) == doctest::Approx(16.535476692067).epsilon(1e-12));
  CHECK(d_param(kSmf28, 1552.4) == doctest::Approx(16.107159236763).epsilon(1e-12));
  CHECK(d_param(SpecSheetModel{1308.0, 0.085}, 1560.4) ==
        doctest::Approx(16.787240768284).epsilon(1e-12));
  CHECK(d_param(SpecSheetModel{1318.0, 0.085}, 1560.4) ==
        doctest::Approx(16.280819919377).epsilon(1e-12));
  CHECK(d_param(kSmf28, 1313.0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("data-sheet slope is the analytic derivative") {
  CHECK(dispersion_slope(kSmf28, 1560.4) ==
        doctest::Approx(0.053209157859).epsilon(1e-10));
  CHECK(dispersion_slope(kSmf28, 1556.4) ==
        doctest::Approx(0.053538971000).epsilon(1e-10));
  const double h = 1e-3;
  const double numeric =
      (d_param(kSmf28, 1556.4 + h) - d_param(kSmf28, 1556.4 - h)) / (2.0 * h);
  CHECK(dispersion_slope(kSmf28, 1556.4) == doctest::Approx(numeric).epsilon(1e-8));
  const double secant = (d_param(kSmf28, 1560.4) - d_param(kSmf28, 1552.4)) / 8.0;
  CHECK(secant == doctest::Approx(0.053539681913).epsilon(1e-10));
}

TEST_CASE("k2 and D convert exactly both ways") {
  CHECK(k2_from_d(16.53, 1560.4) == doctest::Approx(-21.367030284853).epsilon(1e-12));
  CHECK(k2_from_d(d_param(kSmf28, 1560.4), 1560.4) ==
        doctest::Approx(-21.374109573737).epsilon(1e-12));
  CHECK(d_from_k2(-21.37, 1560.4) == doctest::Approx(16.532297436317).epsilon(1e-12));
  CHECK(d_from_k2(-21.37, 1552.4) == doctest::Approx(16.703128618708).epsilon(1e-12));
  for (double d : {-5.0, 0.0, 12.3, 16.69})
    CHECK(d_from_k2(k2_from_d(d, 1547.2), 1547.2) == doctest::Approx(d).epsilon(1e-14));
}

TEST_CASE("k2_at agrees with the wavelength-form conversion") {
  const double omega = omega_from_wavelength(1560.4);
  CHECK(k2_at(kSmf28, omega) ==
        doctest::Approx(k2_from_d(d_param(kSmf28, 1560.4), 1560.4)).epsilon(1e-12));
}

TEST_CASE("Taylor model evaluates local k2 and its wavelength form") {
  TaylorBetaModel m;
  m.omega_ref_radps = omega_from_wavelength(1560.4);
  m.k2_ps2_km = -21.374109573737;
  m.k3_ps3_km = 0.12;
  m.k4_ps4_km = -3e-4;
  const double d_omega = 2.5;
  const double omega = m.omega_ref_radps + d_omega;
  CHECK(k2_at(m, omega) == doctest::Approx(m.k2_ps2_km + m.k3_ps3_km * d_omega +
                                           0.5 * m.k4_ps4_km * d_omega * d_omega)
                               .epsilon(1e-14));
  CHECK(d_param(m, 1560.4) ==
        doctest::Approx(d_from_k2(m.k2_ps2_km, 1560.4)).epsilon(1e-12));
  const double h = 1e-4;
  const double numeric =
      (d_param(m, 1558.0 + h) - d_param(m, 1558.0 - h)) / (2.0 * h);
  CHECK(dispersion_slope(m, 1558.0) == doctest::Approx(numeric).epsilon(1e-6));
}

TEST_CASE("tabulated dispersion interpolates and rejects out-of-range queries") {
  TabulatedDModel m;
  m.lambda_nm = {1552.4, 1560.4};
  m.d_ps_nm_km = {16.06, 16.69};
  CHECK(d_param(m, 1552.4) == doctest::Approx(16.06));
  CHECK(d_param(m, 1560.4) == doctest::Approx(16.69));
  CHECK(d_param(m, 1556.4) == doctest::Approx(16.375).epsilon(1e-12));
  CHECK(dispersion_slope(m, 1556.4) == doctest::Approx(0.078750000000).epsilon(1e-12));
  CHECK_THROWS_AS(d_param(m, 1552.3), std::out_of_range);
  CHECK_THROWS_AS(d_param(m, 1560.5), std::out_of_range);
}

TEST_CASE("model validity is enforced") {
  CHECK_THROWS_AS(d_param(kSmf28, 1199.9), std::out_of_range);
  CHECK_THROWS_AS(d_param(kSmf28, 1700.1), std::out_of_range);
  CHECK_THROWS_AS(d_param(SpecSheetModel{-1.0, 0.085}, 1550.0), std::invalid_argument);
  CHECK_THROWS_AS(d_param(SpecSheetModel{1313.0, 0.0}, 1550.0), std::invalid_argument);
  TabulatedDModel bad;
  bad.lambda_nm = {1550.0};
  bad.d_ps_nm_km = {16.0};
  CHECK_THROWS_AS(d_param(bad, 1550.0), std::invalid_argument);
  bad.lambda_nm = {1550.0, 1550.0};
  bad.d_ps_nm_km = {16.0, 16.1};
  CHECK_THROWS_AS(d_param(bad, 1550.0), std::invalid_argument);
}

TEST_CASE("segment phase is even, linear in length, and hand-verified") {
  const FiberSegment fut{kSmf28, 5.0, "FUT"};
  const double omega_pump = omega_from_wavelength(780.2);
  const double omega_deg = 0.5 * omega_pump;
  const double delta = kTwoPi * 5.0;
  CHECK(phi_fut(fut, omega_deg + delta, omega_pump) ==
        doctest::Approx(105.477002959162).epsilon(1e-12));
  CHECK(phi_fut(fut, omega_deg + delta, omega_pump) ==
        doctest::Approx(phi_fut(fut, omega_deg - delta, omega_pump)).epsilon(1e-15));
  CHECK(phi_fut(fut, omega_deg, omega_pump) == 0.0);

  const FiberSegment tripled{kSmf28, 15.0, "FUT"};
  CHECK(phi_fut(tripled, omega_deg + delta, omega_pump) ==
        doctest::Approx(3.0 * phi_fut(fut, omega_deg + delta, omega_pump)).epsilon(1e-14));

  CHECK(phi_fut(fut, omega_deg + delta, omega_pump, true, 1.25) ==
        doctest::Approx(phi_fut(fut, omega_deg + delta, omega_pump) + 1.25)
            .epsilon(1e-14));
}
