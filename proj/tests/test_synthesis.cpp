#include <cmath>
#include <stdexcept>

#include "biphoton/synthesis.hpp"
#include "doctest.h"

using namespace biphoton;

namespace {

InterferometerSetup basic_setup(double pump_nm = 780.2) {
  InterferometerSetup s;
  s.pump_wavelength_nm = pump_nm;
  for (SpdcEnvelope* env : {&s.source1, &s.source2}) {
    env->omega_deg_radps = s.omega_deg();
    env->fwhm_radps = radps_from_thz(9.0);
    env->shape = EnvelopeShape::gaussian;
    env->peak = 1.0;
  }
  s.internal_poly = {0.4, 0.18, 0.0};
  s.internal_segments.push_back({SpecSheetModel{1313.0, 0.085}, 0.5, "patch"});
  s.fut = FiberSegment{SpecSheetModel{1313.0, 0.085}, 5.0, "FUT"};
  s.pump_linewidth_mhz = 0.1;
  s.path_mismatch_m = 0.03;
  return s;
}

FrequencyGrid grid_of(int n, double halfwidth_radps) {
  FrequencyGrid g;
  g.delta_min_radps = -halfwidth_radps;
  g.delta_max_radps = halfwidth_radps;
  g.n_points = n;
  return g;
}

}  // namespace

TEST_CASE("frequency grid is exactly symmetric with an exact zero") {
  const auto pts = grid_of(2001, 31.4).points();
  REQUIRE(pts.size() == 2001);
  CHECK(pts.front() == -31.4);
  CHECK(pts.back() == 31.4);
  CHECK(pts[1000] == 0.0);
  for (std::size_t i = 0; i < pts.size(); ++i)
    CHECK(pts[i] == -pts[pts.size() - 1 - i]);
}

TEST_CASE("envelopes hit half maximum at half the FWHM") {
  SpdcEnvelope env;
  env.omega_deg_radps = 1207.0;
  env.fwhm_radps = 40.0;
  env.peak = 2.0;
  env.shape = EnvelopeShape::gaussian;
  CHECK(envelope_value(env, env.omega_deg_radps) == doctest::Approx(2.0));
  CHECK(envelope_value(env, env.omega_deg_radps + 20.0) ==
        doctest::Approx(1.0).epsilon(1e-14));
  CHECK(envelope_value(env, env.omega_deg_radps - 20.0) ==
        doctest::Approx(1.0).epsilon(1e-14));
  env.shape = EnvelopeShape::sinc2;
  CHECK(envelope_value(env, env.omega_deg_radps) == doctest::Approx(2.0));
  CHECK(envelope_value(env, env.omega_deg_radps + 20.0) ==
        doctest::Approx(1.0).epsilon(1e-12));
  const double x = kSinc2HalfPoint;
  const double manual = 2.0 * std::pow(std::sin(x) / x, 2.0);
  CHECK(envelope_value(env, env.omega_deg_radps + 20.0) ==
        doctest::Approx(manual).epsilon(1e-14));
}

TEST_CASE("visibility follows the two-envelope contrast formula") {
  SpdcEnvelope e1, e2;
  e1.omega_deg_radps = e2.omega_deg_radps = 1207.0;
  e1.fwhm_radps = e2.fwhm_radps = 40.0;
  e1.peak = 1.0;

  e2.peak = 1.0;
  CHECK(visibility(e1, e2, 1207.0) == doctest::Approx(1.0));
  e2.peak = 0.47;
  CHECK(visibility(e1, e2, 1207.0) == doctest::Approx(0.932742122504).epsilon(1e-12));
  e2.peak = 0.25;
  CHECK(visibility(e1, e2, 1207.0) == doctest::Approx(0.8).epsilon(1e-14));
  e2.peak = 0.203776612387;
  CHECK(visibility(e1, e2, 1207.0) == doctest::Approx(0.75).epsilon(1e-10));

  SpdcEnvelope far1 = e1, far2 = e2;
  CHECK_THROWS_AS(visibility(far1, far2, 1207.0 + 1e6), std::domain_error);
}

TEST_CASE("synthesized spectrum is the two-source interference closed form") {
  const InterferometerSetup setup = basic_setup();
  const FrequencyGrid grid = grid_of(801, 25.0);
  const Interferogram s = synthesize(setup, grid);
  REQUIRE(s.size() == 801);
  CHECK(s.pump_wavelength_nm == 780.2);
  CHECK(s.lambda_deg_nm == doctest::Approx(1560.4));
  CHECK(s.with_fut);
  CHECK(s.coherence_ok);
  CHECK(s.origin == "synthesize");
  for (std::size_t i : {0u, 137u, 400u, 613u, 800u}) {
    const double omega = setup.omega_deg() + s.detuning_radps[i];
    const double f1 = envelope_value(setup.source1, omega);
    const double f2 = envelope_value(setup.source2, omega);
    const double expected =
        f1 + f2 + 2.0 * std::sqrt(f1 * f2) * std::cos(total_phase(setup, omega));
    CHECK(s.values[i] == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("identical sources reduce to 2F(1 + cos phi)") {
  const InterferometerSetup setup = basic_setup();
  const FrequencyGrid grid = grid_of(501, 20.0);
  const Interferogram s = synthesize(setup, grid);
  for (std::size_t i = 0; i < s.size(); i += 50) {
    const double omega = setup.omega_deg() + s.detuning_radps[i];
    const double f = envelope_value(setup.source1, omega);
    const double expected = 2.0 * f * (1.0 + std::cos(total_phase(setup, omega)));
    CHECK(s.values[i] == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("total phase is even in detuning") {
  const InterferometerSetup setup = basic_setup();
  for (double delta : {0.5, 3.0, 11.0, 24.0})
    CHECK(total_phase(setup, setup.omega_deg() + delta) ==
          doctest::Approx(total_phase(setup, setup.omega_deg() - delta)).epsilon(1e-14));
}

TEST_CASE("pump coherence criterion") {
  const CoherenceResult narrow = coherence_check(0.1, 0.03);
  CHECK(narrow.pass);
  CHECK(narrow.coherence_length_m == doctest::Approx(650.047).epsilon(1e-5));
  CHECK(narrow.ratio == doctest::Approx(650.047 / 0.03).epsilon(1e-5));

  const CoherenceResult broad = coherence_check(1000.0, 0.03);
  CHECK_FALSE(broad.pass);
  CHECK(broad.coherence_length_m == doctest::Approx(0.065005).epsilon(1e-4));

  const CoherenceResult matched = coherence_check(1000.0, 0.0);
  CHECK(matched.pass);
  CHECK(std::isinf(matched.ratio));
}

TEST_CASE("a failed coherence criterion flags the spectrum instead of failing") {
  InterferometerSetup setup = basic_setup();
  setup.pump_linewidth_mhz = 1000.0;
  const Interferogram s = synthesize(setup, grid_of(101, 10.0));
  CHECK_FALSE(s.coherence_ok);
  CHECK(s.size() == 101);
}

TEST_CASE("setup fingerprints separate distinct setups") {
  const InterferometerSetup a = basic_setup(780.2);
  const InterferometerSetup b = basic_setup(776.2);
  InterferometerSetup c = basic_setup(780.2);
  c.fut.reset();
  CHECK(setup_fingerprint(a) == setup_fingerprint(basic_setup(780.2)));
  CHECK(setup_fingerprint(a) != setup_fingerprint(b));
  CHECK(setup_fingerprint(a) != setup_fingerprint(c));
}

TEST_CASE("sampled envelopes carry the degeneracy metadata") {
  const InterferometerSetup setup = basic_setup();
  const Interferogram env = sample_envelope(setup.source2, grid_of(201, 15.0));
  CHECK(env.lambda_deg_nm == doctest::Approx(1560.4));
  for (std::size_t i = 0; i < env.size(); i += 40)
    CHECK(env.values[i] ==
          doctest::Approx(envelope_value(setup.source2,
                                         setup.omega_deg() + env.detuning_radps[i]))
              .epsilon(1e-15));
}
