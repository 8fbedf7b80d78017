#include "biphoton/extraction.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace biphoton {

namespace {

constexpr double kGridTolerance = 1e-9;

void require_aligned(const std::vector<double>& a, const std::vector<double>& b,
                     const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": grid sizes differ");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double tol = kGridTolerance * std::max(1.0, std::abs(a[i]));
    if (std::abs(a[i] - b[i]) > tol)
      throw std::invalid_argument(std::string(what) + ": grids are not aligned");
  }
}

double envelope_peak(const Interferogram& env) {
  double peak = 0.0;
  for (double v : env.values) peak = std::max(peak, v);
  if (!(peak > 0.0))
    throw std::invalid_argument("normalize: envelope has no positive values");
  return peak;
}

struct FitData {
  std::vector<double> x;  // delta
  std::vector<double> y;  // normalized value
  std::vector<double> w;  // weight
  bool weighted = false;
};

FitData collect_fit_data(const NormalizedSpectrum& ns, double window) {
  FitData d;
  const bool has_sigma = !ns.sigma.empty();
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!ns.mask[i]) continue;
    const double x = ns.detuning_radps[i];
    if (window > 0.0 && std::abs(x) > window) continue;
    double w = 1.0;
    if (has_sigma) {
      const double s = ns.sigma[i];
      if (!(s > 0.0) || !std::isfinite(s)) continue;
      w = 1.0 / (s * s);
    }
    d.x.push_back(x);
    d.y.push_back(ns.values[i]);
    d.w.push_back(w);
  }
  d.weighted = has_sigma;
  return d;
}

struct Params {
  double c0, c2, c4, v, s;
};

double model_value(const Params& p, double x) {
  const double x2 = x * x;
  const double phi = p.c0 + p.c2 * x2 + p.c4 * x2 * x2;
  return p.s * (1.0 + p.v * std::cos(phi)) - 1.0;
}

double chi_square(const Params& p, const FitData& d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    const double r = model_value(p, d.x[i]) - d.y[i];
    acc += d.w[i] * r * r;
  }
  return acc;
}

// One Levenberg-Marquardt minimization from a given start. n_par is 5, or 4
// with the quartic frozen.
struct LmOutcome {
  Params p;
  double chi2 = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  Eigen::MatrixXd normal;  // J^T W J at the final point
};

LmOutcome run_lm(Params p, const FitData& d, bool include_quartic, int max_iterations) {
  const int np = include_quartic ? 5 : 4;
  const std::size_t n = d.x.size();
  Eigen::MatrixXd a(np, np);
  Eigen::VectorXd g(np), step(np);
  auto fill_normal = [&](const Params& q, Eigen::MatrixXd& na, Eigen::VectorXd* ng) {
    na.setZero();
    if (ng) ng->setZero();
    Eigen::VectorXd j(np);
    for (std::size_t i = 0; i < n; ++i) {
      const double x2 = d.x[i] * d.x[i];
      const double phi = q.c0 + q.c2 * x2 + q.c4 * x2 * x2;
      const double sinp = std::sin(phi);
      const double cosp = std::cos(phi);
      j(0) = -q.s * q.v * sinp;
      j(1) = j(0) * x2;
      const int iv = include_quartic ? 3 : 2;
      if (include_quartic) j(2) = j(0) * x2 * x2;
      j(iv) = q.s * cosp;
      j(iv + 1) = 1.0 + q.v * cosp;
      const double r = q.s * (1.0 + q.v * cosp) - 1.0 - d.y[i];
      na.noalias() += d.w[i] * j * j.transpose();
      if (ng) ng->noalias() += d.w[i] * r * j;
    }
  };
  auto unpack = [&](const Eigen::VectorXd& dp, Params q) {
    q.c0 += dp(0);
    q.c2 += dp(1);
    if (include_quartic) q.c4 += dp(2);
    const int iv = include_quartic ? 3 : 2;
    q.v += dp(iv);
    q.s += dp(iv + 1);
    return q;
  };

  LmOutcome out;
  out.p = p;
  double chi2 = chi_square(p, d);
  double lambda = 1e-3;
  int flat_accepts = 0;
  int iter = 0;
  for (; iter < max_iterations; ++iter) {
    fill_normal(p, a, &g);
    bool accepted = false;
    for (int attempt = 0; attempt < 40; ++attempt) {
      Eigen::MatrixXd damped = a;
      for (int k = 0; k < np; ++k)
        damped(k, k) += lambda * std::max(a(k, k), 1e-12);
      step = damped.ldlt().solve(-g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Params cand = unpack(step, p);
      const double cand_chi2 = chi_square(cand, d);
      if (std::isfinite(cand_chi2) && cand_chi2 <= chi2) {
        const double drop = chi2 - cand_chi2;
        p = cand;
        flat_accepts = drop <= 1e-13 * (chi2 + 1e-300) ? flat_accepts + 1 : 0;
        chi2 = cand_chi2;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 5.0;
      if (lambda > 1e14) break;
    }
    if (!accepted || flat_accepts >= 2) {
      out.converged = accepted || flat_accepts >= 2 || chi2 == 0.0;
      if (!accepted && lambda > 1e14) out.converged = true;  // stalled at optimum
      break;
    }
    if (chi2 == 0.0) {
      out.converged = true;
      break;
    }
  }
  if (iter >= max_iterations) out.converged = false;
  out.p = p;
  out.chi2 = chi2;
  out.iterations = iter;
  fill_normal(p, a, nullptr);
  out.normal = a;
  return out;
}

// Canonical branch: cos is even in its argument, so (c0,c2,c4) and
// (-c0,-c2,-c4) are the same model; report c2 >= 0. Negative V folds into a
// pi phase shift. Returns sign factors for (c0,c2,c4,V) so the covariance
// can be transformed consistently.
std::array<double, 4> canonicalize(Params& p) {
  std::array<double, 4> sign{1.0, 1.0, 1.0, 1.0};
  if (p.v < 0.0) {
    p.v = -p.v;
    p.c0 += kPi;
    sign[3] = -1.0;
  }
  if (p.c2 < 0.0) {
    p.c0 = -p.c0;
    p.c2 = -p.c2;
    p.c4 = -p.c4;
    sign[0] = -sign[0];
    sign[1] = -sign[1];
    sign[2] = -sign[2];
  }
  p.c0 = std::remainder(p.c0, kTwoPi);
  return sign;
}

// Initial guess from the fringe-minimum ladder: the k-th fringe minimum away
// from delta = 0 sits at phase (2k-1) pi; regressing that ladder against
// delta^2 lands c2 in the right basin of the multimodal cosine fit.
Params initial_guess(const FitData& d) {
  const std::size_t n = d.x.size();
  double vmax = -std::numeric_limits<double>::infinity();
  double vmin = std::numeric_limits<double>::infinity();
  std::size_t i0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    vmax = std::max(vmax, d.y[i]);
    vmin = std::min(vmin, d.y[i]);
    if (std::abs(d.x[i]) < std::abs(d.x[i0])) i0 = i;
  }
  Params p;
  p.s = std::clamp(1.0 + 0.5 * (vmax + vmin), 0.2, 3.0);
  p.v = std::clamp((vmax - vmin) / (2.0 * p.s), 0.05, 1.1);
  p.c4 = 0.0;

  // One trough per excursion below the hysteresis band; a plain 3-point
  // local-minimum test would register several noise minima per fringe.
  const double midline = p.s - 1.0;
  const double hyst = 0.35 * 0.5 * (vmax - vmin);
  std::vector<double> ladder_x2, ladder_phi;
  for (int side = 0; side < 2; ++side) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i)
      if (side == 0 ? d.x[i] > 0.0 : d.x[i] < 0.0) order.push_back(i);
    if (side == 1) std::reverse(order.begin(), order.end());
    std::vector<double> minima;  // |x| at each trough, ascending
    bool in_trough = false;
    double trough_x = 0.0, trough_val = 0.0;
    for (std::size_t j : order) {
      const double y = d.y[j];
      if (y > midline + hyst) {
        if (in_trough) {
          minima.push_back(trough_x);
          in_trough = false;
        }
      } else if (y < midline - hyst) {
        if (!in_trough) {
          in_trough = true;
          trough_x = std::abs(d.x[j]);
          trough_val = y;
        } else if (y < trough_val) {
          trough_val = y;
          trough_x = std::abs(d.x[j]);
        }
      }
    }
    if (in_trough) minima.push_back(trough_x);
    for (std::size_t k = 0; k < minima.size(); ++k) {
      ladder_x2.push_back(minima[k] * minima[k]);
      ladder_phi.push_back((2.0 * static_cast<double>(k + 1) - 1.0) * kPi);
    }
  }

  if (ladder_x2.size() >= 2) {
    const std::size_t m = ladder_x2.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < m; ++i) {
      sx += ladder_x2[i];
      sy += ladder_phi[i];
      sxx += ladder_x2[i] * ladder_x2[i];
      sxy += ladder_x2[i] * ladder_phi[i];
    }
    const double det = static_cast<double>(m) * sxx - sx * sx;
    if (std::abs(det) > 0.0) {
      p.c2 = (static_cast<double>(m) * sxy - sx * sy) / det;
      p.c0 = (sy - p.c2 * sx) / static_cast<double>(m);
    } else {
      p.c2 = ladder_phi[0] / std::max(ladder_x2[0], 1e-12);
      p.c0 = 0.0;
    }
  } else {
    double span = 0.0;
    for (std::size_t i = 0; i < n; ++i) span = std::max(span, std::abs(d.x[i]));
    p.c2 = ladder_x2.size() == 1 ? ladder_phi[0] / std::max(ladder_x2[0], 1e-12)
                                 : kPi / std::max(span * span, 1e-12);
    const double a0 = std::clamp((d.y[i0] + 1.0 - p.s) / (p.s * p.v), -1.0, 1.0);
    p.c0 = std::acos(a0);
  }
  p.c0 = std::remainder(p.c0, kTwoPi);
  return p;
}

std::size_t count_ladder_minima(const FitData& d) {
  const std::size_t n = d.x.size();
  if (n < 3) return 0;
  double vmax = -std::numeric_limits<double>::infinity();
  double vmin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    vmax = std::max(vmax, d.y[i]);
    vmin = std::min(vmin, d.y[i]);
  }
  const double midline = 0.5 * (vmax + vmin);
  std::size_t count = 0;
  for (std::size_t i = 1; i + 1 < n; ++i)
    if (d.y[i] <= d.y[i - 1] && d.y[i] < d.y[i + 1] && d.y[i] < midline) ++count;
  return count;
}

RaisedCosineFit make_fit_result(const LmOutcome& lm, const FitData& d,
                                bool include_quartic, double window) {
  RaisedCosineFit fit;
  Params p = lm.p;
  const std::array<double, 4> sign = canonicalize(p);
  fit.c0_rad = p.c0;
  fit.c2_rad_ps2 = p.c2;
  fit.c4_rad_ps4 = p.c4;
  fit.visibility = p.v;
  fit.amplitude_scale = p.s;
  fit.window_halfwidth_radps = window;
  fit.n_points = static_cast<int>(d.x.size());
  fit.iterations = lm.iterations;
  fit.converged = lm.converged;

  double rss = 0.0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    const double r = model_value(p, d.x[i]) - d.y[i];
    rss += r * r;
  }
  fit.residual_rms = std::sqrt(rss / static_cast<double>(d.x.size()));

  const int np = include_quartic ? 5 : 4;
  const int dof = static_cast<int>(d.x.size()) - np;
  if (dof > 0 && lm.normal.rows() == np) {
    const double scale = lm.chi2 / static_cast<double>(dof);
    Eigen::MatrixXd cov =
        lm.normal.ldlt().solve(Eigen::MatrixXd::Identity(np, np)) * scale;
    // Parameter order in the solver: c0, c2, [c4,] V, s.
    const int iv = include_quartic ? 3 : 2;
    auto at = [&](int r, int c) { return cov(r, c); };
    const int map4[4] = {0, 1, include_quartic ? 2 : -1, iv};
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        fit.covariance[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
            (map4[r] < 0 || map4[c] < 0)
                ? 0.0
                : sign[static_cast<std::size_t>(r)] * sign[static_cast<std::size_t>(c)] *
                      at(map4[r], map4[c]);
  }
  return fit;
}

double poisson_draw(std::mt19937_64& rng, double mean) {
  if (!(mean > 0.0)) return 0.0;
  return static_cast<double>(std::poisson_distribution<long long>(mean)(rng));
}

Interferogram resample_counts(const Interferogram& src, std::uint64_t seed) {
  const bool noiseless = src.sigma.empty() && src.counts.empty();
  if (noiseless) return src;
  Interferogram out = src;
  std::mt19937_64 rng(seed);
  const std::size_t n = src.size();
  const bool have_counts = !src.counts.empty();
  out.counts.resize(n);
  out.sigma.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double counts, scale;
    if (have_counts) {
      counts = src.counts[i];
      scale = counts > 0.0 ? src.values[i] / counts
                           : (i < src.sigma.size() && src.sigma[i] > 0.0 ? src.sigma[i] : 1.0);
    } else {
      const double s = src.sigma[i];
      counts = s > 0.0 ? (src.values[i] / s) * (src.values[i] / s) : 0.0;
      scale = s > 0.0 ? (counts > 0.0 ? src.values[i] / counts : s) : 1.0;
    }
    const double k = poisson_draw(rng, counts);
    out.counts[i] = k;
    out.values[i] = k * scale;
    out.sigma[i] = std::sqrt(std::max(k, 1.0)) * scale;
  }
  return out;
}

}  // namespace

double RaisedCosineFit::sigma_c2() const { return std::sqrt(std::max(covariance[1][1], 0.0)); }
double RaisedCosineFit::sigma_c4() const { return std::sqrt(std::max(covariance[2][2], 0.0)); }

double RaisedCosineFit::phase_at(double detuning_radps) const {
  const double x2 = detuning_radps * detuning_radps;
  return c0_rad + c2_rad_ps2 * x2 + c4_rad_ps4 * x2 * x2;
}

Interferogram resample_onto(const Interferogram& src, const std::vector<double>& detuning_radps) {
  if (src.size() < 2)
    throw std::invalid_argument("resample_onto: source needs >= 2 points");
  Interferogram out = src;
  out.detuning_radps = detuning_radps;
  out.values.assign(detuning_radps.size(), 0.0);
  out.sigma.clear();
  out.counts.clear();
  const auto& xs = src.detuning_radps;
  for (std::size_t i = 0; i < detuning_radps.size(); ++i) {
    const double x = detuning_radps[i];
    if (x < xs.front() || x > xs.back()) {
      out.values[i] = 0.0;
      continue;
    }
    if (x >= xs.back()) {
      out.values[i] = src.values.back();
      continue;
    }
    const auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    const std::size_t lo = hi - 1;
    const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    out.values[i] = src.values[lo] * (1.0 - t) + src.values[hi] * t;
  }
  return out;
}

NormalizedSpectrum normalize(const Interferogram& measured, const Interferogram& env1,
                             const Interferogram& env2, const NormalizeOptions& opts) {
  const std::size_t n = measured.size();
  if (n == 0 || measured.values.size() != n)
    throw std::invalid_argument("normalize: empty or inconsistent spectrum");
  require_aligned(measured.detuning_radps, env1.detuning_radps, "normalize env1");
  require_aligned(measured.detuning_radps, env2.detuning_radps, "normalize env2");
  if (!(opts.envelope_floor > 0.0 && opts.envelope_floor < 1.0))
    throw std::invalid_argument("normalize: envelope_floor must be in (0, 1)");

  const double floor1 = opts.envelope_floor * envelope_peak(env1);
  const double floor2 = opts.envelope_floor * envelope_peak(env2);
  const bool has_sigma = !measured.sigma.empty();

  NormalizedSpectrum out;
  out.detuning_radps = measured.detuning_radps;
  out.values.assign(n, 0.0);
  if (has_sigma) out.sigma.assign(n, 0.0);
  out.mask.assign(n, 0);
  out.lambda_deg_nm = measured.lambda_deg_nm;
  out.pump_wavelength_nm = measured.pump_wavelength_nm;
  out.with_fut = measured.with_fut;
  out.origin = measured.origin;

  double alpha = 1.0;
  if (opts.auto_scale) {
    // The chirped fringe term leaks into plain sums from two places: the
    // stationary-phase region at delta = 0 and the hard window edge. The
    // delta^2 factor zeroes the former, the Hann taper the latter.
    double span = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (env1.values[i] < floor1 || env2.values[i] < floor2) continue;
      span = std::max(span, std::abs(measured.detuning_radps[i]));
    }
    double sum_env = 0.0, sum_meas = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (env1.values[i] < floor1 || env2.values[i] < floor2) continue;
      const double x = measured.detuning_radps[i];
      const double u = span > 0.0 ? std::abs(x) / span : 0.0;
      const double w = x * x * (0.5 + 0.5 * std::cos(kPi * u));
      sum_env += w * (env1.values[i] + env2.values[i]);
      sum_meas += w * measured.values[i];
    }
    if (!(sum_meas > 0.0))
      throw std::invalid_argument("normalize: cannot auto-scale a zero spectrum");
    alpha = sum_env / sum_meas;
  }
  out.scale_applied = alpha;

  std::size_t used = 0, clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f1 = env1.values[i];
    const double f2 = env2.values[i];
    if (f1 < floor1 || f2 < floor2) continue;
    const double denom = 2.0 * std::sqrt(f1 * f2);
    double v = (alpha * measured.values[i] - f1 - f2) / denom;
    if (std::abs(v) > opts.clip) {
      v = std::clamp(v, -opts.clip, opts.clip);
      ++clipped;
    }
    out.values[i] = v;
    if (has_sigma) out.sigma[i] = alpha * measured.sigma[i] / denom;
    out.mask[i] = 1;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("normalize: all points masked out");
  out.clipping_fraction = static_cast<double>(clipped) / static_cast<double>(used);
  return out;
}

RaisedCosineFit fit_raised_cosine(const NormalizedSpectrum& normalized,
                                  const FitOptions& opts) {
  FitData d = collect_fit_data(normalized, opts.window_halfwidth_radps);
  const std::size_t n = d.x.size();
  const std::size_t n_params = opts.include_quartic ? 5 : 4;
  if (n <= n_params)
    throw FitError("fit_raised_cosine: too few usable points", {});
  if (n < 50 && count_ladder_minima(d) < 8)
    throw FitError("fit_raised_cosine: need >= 50 points or >= 8 fringes in the window", {});

  const Params p0 = initial_guess(d);
  std::vector<Params> starts;
  starts.push_back(p0);
  for (int r = 0; r < opts.max_restarts; ++r) {
    Params q = p0;
    switch (r % 4) {
      case 0: q.c2 *= 1.5; break;
      case 1: q.c2 *= 2.0 / 3.0; break;
      case 2: q.c0 = -q.c0; break;
      case 3:
        q.v = 0.9;
        q.s = 1.0;
        break;
    }
    starts.push_back(q);
  }

  RaisedCosineFit best;
  double best_chi2 = std::numeric_limits<double>::infinity();
  bool have_best = false;
  for (const Params& start : starts) {
    const LmOutcome lm = run_lm(start, d, opts.include_quartic, opts.max_iterations);
    if (!have_best || lm.chi2 < best_chi2) {
      best = make_fit_result(lm, d, opts.include_quartic, opts.window_halfwidth_radps);
      best_chi2 = lm.chi2;
      have_best = true;
    }
    if (lm.converged) {
      RaisedCosineFit fit =
          make_fit_result(lm, d, opts.include_quartic, opts.window_halfwidth_radps);
      if (fit.residual_rms < 0.45 && fit.visibility <= 1.05) return fit;
    }
  }
  throw FitError("fit_raised_cosine: no acceptable converged fit after restarts", best);
}

PhaseTrace extract_phase_pointwise(const NormalizedSpectrum& normalized) {
  const std::size_t n = normalized.size();
  if (n < 5)
    throw std::invalid_argument("extract_phase_pointwise: too few points");
  const auto& xs = normalized.detuning_radps;
  for (std::size_t i = 0; i < n; ++i) {
    const double mirror = xs[n - 1 - i];
    if (std::abs(xs[i] + mirror) > kGridTolerance * std::max(1.0, std::abs(xs[i])))
      throw std::invalid_argument("extract_phase_pointwise: grid is not symmetric");
  }
  const bool has_sigma = !normalized.sigma.empty();
  const std::size_t half = n / 2;
  const bool odd = n % 2 == 1;

  // Even/odd split over mirror pairs, indexed by distance from center.
  const std::size_t m = odd ? half + 1 : half;
  std::vector<double> even(m), even_sigma(m, 0.0);
  std::vector<std::uint8_t> pair_mask(m, 0);
  double asym_sq = 0.0, asym_z_sq = 0.0;
  std::size_t asym_n = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t ih = half + k;  // delta >= 0 side
    const std::size_t il = odd ? half - k : half - 1 - k;
    if (!normalized.mask[ih] || !normalized.mask[il]) continue;
    pair_mask[k] = 1;
    const double a = 0.5 * (normalized.values[ih] + normalized.values[il]);
    const double o = 0.5 * (normalized.values[ih] - normalized.values[il]);
    even[k] = a;
    double s = 0.0;
    if (has_sigma)
      s = 0.5 * std::hypot(normalized.sigma[ih], normalized.sigma[il]);
    even_sigma[k] = s;
    if (ih != il) {
      asym_sq += o * o;
      if (s > 0.0) asym_z_sq += (o * o) / (s * s);
      ++asym_n;
    }
  }
  if (std::count(pair_mask.begin(), pair_mask.end(), std::uint8_t{1}) < 5)
    throw std::invalid_argument("extract_phase_pointwise: too few masked-in pairs");

  // Branch-corrected arccos walk outward from delta = 0. The raw arccos is a
  // triangle wave in the unwrapped phase; at each fringe extremum the
  // direction flips and (at minima) the base advances by 2 pi.
  std::vector<double> phi(m, 0.0), phi_sigma(m, 0.0);
  double base = 0.0, dir = 1.0;
  double prev = 0.0, prev_step = 0.0;
  bool have_prev = false;
  for (std::size_t k = 0; k < m; ++k) {
    if (!pair_mask[k]) continue;
    const double a = std::clamp(even[k], -1.0, 1.0);
    const double r = std::acos(a);
    if (!have_prev) {
      phi[k] = r;
      prev = r;
      have_prev = true;
    } else {
      const double cand_same = base + dir * r;
      const double cand_switch = dir > 0.0 ? base + kTwoPi - r : base + r;
      const double expected = prev + prev_step;
      const double err_same = cand_same >= prev - 0.3
                                  ? std::abs(cand_same - expected)
                                  : std::numeric_limits<double>::infinity();
      const double err_switch = cand_switch >= prev - 0.3
                                    ? std::abs(cand_switch - expected)
                                    : std::numeric_limits<double>::infinity();
      double chosen;
      if (err_switch < err_same) {
        if (dir > 0.0) base += kTwoPi;
        dir = -dir;
        chosen = cand_switch;
      } else {
        chosen = cand_same;
      }
      if (!std::isfinite(chosen))
        throw std::runtime_error("extract_phase_pointwise: lost the fringe branch");
      const double step = chosen - prev;
      if (step > kPi / 2.0 * 1.05)
        throw std::runtime_error(
            "extract_phase_pointwise: undersampled fringes (need >= 4 samples per fringe)");
      phi[k] = chosen;
      prev_step = step;
      prev = chosen;
    }
    const double guard = std::max(1.0 - a * a, 1e-4);
    const double s = even_sigma[k] / std::sqrt(guard);
    phi_sigma[k] = std::max(s, 1e-12);
  }

  PhaseTrace trace;
  trace.detuning_radps = xs;
  trace.phase_rad.assign(n, 0.0);
  trace.sigma_rad.assign(n, 0.0);
  trace.mask.assign(n, 0);
  trace.lambda_deg_nm = normalized.lambda_deg_nm;
  for (std::size_t k = 0; k < m; ++k) {
    if (!pair_mask[k]) continue;
    const std::size_t ih = half + k;
    const std::size_t il = odd ? half - k : half - 1 - k;
    for (std::size_t i : {ih, il}) {
      trace.phase_rad[i] = phi[k];
      trace.sigma_rad[i] = phi_sigma[k];
      trace.mask[i] = 1;
    }
  }
  trace.asymmetry = asym_n > 0 ? std::sqrt(asym_sq / static_cast<double>(asym_n)) : 0.0;
  trace.asymmetry_z = asym_n > 0 ? std::sqrt(asym_z_sq / static_cast<double>(asym_n)) : 0.0;
  return trace;
}

AsymmetryResult normalized_asymmetry(const NormalizedSpectrum& normalized) {
  const auto& xs = normalized.detuning_radps;
  const std::size_t n = normalized.size();
  const bool has_sigma = !normalized.sigma.empty();
  AsymmetryResult res;
  double sq = 0.0, zsq = 0.0;
  std::size_t zn = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!normalized.mask[i] || !(xs[i] > 0.0)) continue;
    const double target = -xs[i];
    // Bracketing masked-in pair around the mirror point.
    const auto it = std::upper_bound(xs.begin(), xs.end(), target);
    if (it == xs.begin() || it == xs.end()) continue;
    const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    const std::size_t lo = hi - 1;
    if (!normalized.mask[lo] || !normalized.mask[hi]) continue;
    const double t = (target - xs[lo]) / (xs[hi] - xs[lo]);
    const double mirror = normalized.values[lo] * (1.0 - t) + normalized.values[hi] * t;
    const double o = 0.5 * (normalized.values[i] - mirror);
    sq += o * o;
    ++res.n_pairs;
    if (has_sigma) {
      const double sm = normalized.sigma[lo] * (1.0 - t) + normalized.sigma[hi] * t;
      const double so = 0.5 * std::hypot(normalized.sigma[i], sm);
      if (so > 0.0) {
        zsq += (o / so) * (o / so);
        ++zn;
      }
    }
  }
  if (res.n_pairs > 0) res.rms = std::sqrt(sq / static_cast<double>(res.n_pairs));
  if (zn > 0) res.z = std::sqrt(zsq / static_cast<double>(zn));
  return res;
}

PhaseTrace phase_from_coefficients(const SubtractedCoefficients& coeffs,
                                   const std::vector<double>& detuning_radps,
                                   double lambda_deg_nm) {
  PhaseTrace trace;
  trace.detuning_radps = detuning_radps;
  const std::size_t n = detuning_radps.size();
  trace.phase_rad.resize(n);
  trace.sigma_rad.resize(n);
  trace.mask.assign(n, 1);
  trace.lambda_deg_nm = lambda_deg_nm;
  for (std::size_t i = 0; i < n; ++i) {
    const double x2 = detuning_radps[i] * detuning_radps[i];
    trace.phase_rad[i] = coeffs.dc2_rad_ps2 * x2 + coeffs.dc4_rad_ps4 * x2 * x2;
    const double var = x2 * x2 * coeffs.sigma_dc2 * coeffs.sigma_dc2 +
                       x2 * x2 * x2 * x2 * coeffs.sigma_dc4 * coeffs.sigma_dc4 +
                       2.0 * x2 * x2 * x2 * coeffs.cov_c2c4;
    trace.sigma_rad[i] = std::sqrt(std::max(var, 0.0));
  }
  return trace;
}

SubtractedCoefficients subtract_reference(const RaisedCosineFit& with_fut,
                                          const RaisedCosineFit& without_fut) {
  SubtractedCoefficients d;
  d.dc2_rad_ps2 = with_fut.c2_rad_ps2 - without_fut.c2_rad_ps2;
  d.dc4_rad_ps4 = with_fut.c4_rad_ps4 - without_fut.c4_rad_ps4;
  d.sigma_dc2 = std::sqrt(std::max(with_fut.covariance[1][1] + without_fut.covariance[1][1], 0.0));
  d.sigma_dc4 = std::sqrt(std::max(with_fut.covariance[2][2] + without_fut.covariance[2][2], 0.0));
  d.cov_c2c4 = with_fut.covariance[1][2] + without_fut.covariance[1][2];
  return d;
}

PhaseTrace subtract_reference(const PhaseTrace& with_fut, const PhaseTrace& without_fut) {
  require_aligned(with_fut.detuning_radps, without_fut.detuning_radps, "subtract_reference");
  const std::size_t n = with_fut.detuning_radps.size();
  PhaseTrace out;
  out.detuning_radps = with_fut.detuning_radps;
  out.phase_rad.assign(n, 0.0);
  out.sigma_rad.assign(n, 0.0);
  out.mask.assign(n, 0);
  out.lambda_deg_nm = with_fut.lambda_deg_nm;

  // Zero the constant at the innermost masked-in point.
  double offset = 0.0;
  double best_abs = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (!with_fut.mask[i] || !without_fut.mask[i]) continue;
    const double ax = std::abs(out.detuning_radps[i]);
    if (ax < best_abs) {
      best_abs = ax;
      offset = with_fut.phase_rad[i] - without_fut.phase_rad[i];
    }
  }
  if (!std::isfinite(best_abs))
    throw std::invalid_argument("subtract_reference: no overlapping masked-in points");

  for (std::size_t i = 0; i < n; ++i) {
    if (!with_fut.mask[i] || !without_fut.mask[i]) continue;
    out.phase_rad[i] = with_fut.phase_rad[i] - without_fut.phase_rad[i] - offset;
    out.sigma_rad[i] = std::hypot(with_fut.sigma_rad[i], without_fut.sigma_rad[i]);
    out.mask[i] = 1;
  }

  // The arccos reconstruction leaves each input trace with an arbitrary
  // global sign, so align the difference with the positive-quadratic branch
  // used by the parametric fit.
  double lean = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (out.mask[i])
      lean += out.phase_rad[i] * out.detuning_radps[i] * out.detuning_radps[i];
  if (lean < 0.0)
    for (std::size_t i = 0; i < n; ++i) out.phase_rad[i] = -out.phase_rad[i];
  return out;
}

DispersionEstimate estimate_dispersion(const SubtractedCoefficients& delta,
                                       double fut_length_m, double lambda_deg_nm,
                                       EstimateMethod method) {
  if (!(fut_length_m > 0.0))
    throw std::invalid_argument("estimate_dispersion: FUT length must be positive");
  if (!(lambda_deg_nm > 0.0))
    throw std::invalid_argument("estimate_dispersion: wavelength must be positive");
  DispersionEstimate e;
  e.lambda_deg_nm = lambda_deg_nm;
  e.fut_length_m = fut_length_m;
  e.method = method;
  // dc2 = -k2 * L with L in m gives k2 in ps^2/m; *1e3 converts to ps^2/km.
  e.k2_ps2_km = -delta.dc2_rad_ps2 / fut_length_m * 1e3;
  e.sigma_k2_ps2_km = delta.sigma_dc2 / fut_length_m * 1e3;
  e.d_ps_nm_km = d_from_k2(e.k2_ps2_km, lambda_deg_nm);
  e.sigma_d_ps_nm_km =
      kTwoPi * kSpeedOfLight / (lambda_deg_nm * lambda_deg_nm) * e.sigma_k2_ps2_km;
  return e;
}

DispersionEstimate estimate_dispersion(const PhaseTrace& delta_phase,
                                       double fut_length_m, double lambda_deg_nm) {
  // Weighted linear least squares of Phi = a + c2 x + c4 x^2 with x = delta^2.
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  std::size_t used = 0;
  for (std::size_t i = 0; i < delta_phase.detuning_radps.size(); ++i) {
    if (!delta_phase.mask[i]) continue;
    const double s = delta_phase.sigma_rad[i];
    const double w = s > 0.0 ? 1.0 / (s * s) : 1.0;
    const double x = delta_phase.detuning_radps[i] * delta_phase.detuning_radps[i];
    const Eigen::Vector3d row(1.0, x, x * x);
    ata.noalias() += w * row * row.transpose();
    atb.noalias() += w * delta_phase.phase_rad[i] * row;
    ++used;
  }
  if (used < 4)
    throw std::invalid_argument("estimate_dispersion: too few masked-in phase points");
  const Eigen::Vector3d coef = ata.ldlt().solve(atb);
  Eigen::Matrix3d cov = ata.ldlt().solve(Eigen::Matrix3d::Identity());

  // Scale by reduced chi-square, as in the parametric path.
  double chi2 = 0.0;
  for (std::size_t i = 0; i < delta_phase.detuning_radps.size(); ++i) {
    if (!delta_phase.mask[i]) continue;
    const double s = delta_phase.sigma_rad[i];
    const double w = s > 0.0 ? 1.0 / (s * s) : 1.0;
    const double x = delta_phase.detuning_radps[i] * delta_phase.detuning_radps[i];
    const double r = coef(0) + coef(1) * x + coef(2) * x * x - delta_phase.phase_rad[i];
    chi2 += w * r * r;
  }
  if (used > 3) cov *= chi2 / static_cast<double>(used - 3);

  SubtractedCoefficients d;
  d.dc2_rad_ps2 = coef(1);
  d.dc4_rad_ps4 = coef(2);
  d.sigma_dc2 = std::sqrt(std::max(cov(1, 1), 0.0));
  d.sigma_dc4 = std::sqrt(std::max(cov(2, 2), 0.0));
  d.cov_c2c4 = cov(1, 2);
  return estimate_dispersion(d, fut_length_m, delta_phase.lambda_deg_nm > 0.0
                                                  ? delta_phase.lambda_deg_nm
                                                  : lambda_deg_nm,
                             EstimateMethod::pointwise);
}

SlopeEstimate slope_from_two(const DispersionEstimate& e1, const DispersionEstimate& e2) {
  const double dl = e1.lambda_deg_nm - e2.lambda_deg_nm;
  if (std::abs(dl) < 1e-6)
    throw std::invalid_argument("slope_from_two: degeneracy wavelengths must differ");
  SlopeEstimate s;
  s.lambda1_nm = e1.lambda_deg_nm;
  s.lambda2_nm = e2.lambda_deg_nm;
  s.midpoint_nm = 0.5 * (e1.lambda_deg_nm + e2.lambda_deg_nm);
  s.s_ps_nm2_km = (e1.d_ps_nm_km - e2.d_ps_nm_km) / dl;
  s.sigma_s = std::hypot(e1.sigma_d_ps_nm_km, e2.sigma_d_ps_nm_km) / std::abs(dl);
  return s;
}

double min_measurable_dl(double bandwidth_full_radps, double phase_threshold_rad,
                         double lambda_nm) {
  if (!(bandwidth_full_radps > 0.0))
    throw std::invalid_argument("min_measurable_dl: bandwidth must be positive");
  if (!(phase_threshold_rad >= 0.0))
    throw std::invalid_argument("min_measurable_dl: threshold must be >= 0");
  if (!(lambda_nm > 0.0))
    throw std::invalid_argument("min_measurable_dl: wavelength must be positive");
  const double half_bw = 0.5 * bandwidth_full_radps;
  // |k2| L = D L lambda^2 / (2 pi c); requiring |k2| L (bw/2)^2 >= threshold
  // and solving for D L.
  return phase_threshold_rad * kTwoPi * kSpeedOfLight /
         (lambda_nm * lambda_nm * half_bw * half_bw);
}

ExtractionResult extract_dispersion(const Interferogram& with_fut,
                                    const Interferogram& without_fut,
                                    const Interferogram& env1, const Interferogram& env2,
                                    double fut_length_m, const PipelineOptions& opts) {
  auto normalize_one = [&](const Interferogram& measured) {
    const Interferogram e1 = resample_onto(env1, measured.detuning_radps);
    const Interferogram e2 = resample_onto(env2, measured.detuning_radps);
    return normalize(measured, e1, e2, opts.normalize);
  };
  ExtractionResult r;
  r.norm_with = normalize_one(with_fut);
  r.norm_without = normalize_one(without_fut);
  r.fit_with = fit_raised_cosine(r.norm_with, opts.fit);
  r.fit_without = fit_raised_cosine(r.norm_without, opts.fit);
  r.coeffs = subtract_reference(r.fit_with, r.fit_without);
  r.estimate = estimate_dispersion(r.coeffs, fut_length_m,
                                   with_fut.lambda_deg_nm, EstimateMethod::parametric);
  return r;
}

DispersionEstimate bootstrap_uncertainty(const Interferogram& with_fut,
                                         const Interferogram& without_fut,
                                         const Interferogram& env1,
                                         const Interferogram& env2,
                                         double fut_length_m, const PipelineOptions& opts,
                                         const BootstrapOptions& boot, Exec exec) {
  if (boot.n_resamples < 50)
    throw std::invalid_argument("bootstrap_uncertainty: need at least 50 resamples");
  DispersionEstimate base =
      extract_dispersion(with_fut, without_fut, env1, env2, fut_length_m, opts).estimate;

  const int nr = boot.n_resamples;
  std::vector<double> d_values(static_cast<std::size_t>(nr), 0.0);
  std::vector<double> k2_values(static_cast<std::size_t>(nr), 0.0);
  std::vector<std::uint8_t> ok(static_cast<std::size_t>(nr), 0);

  const bool par = exec == Exec::parallel;
#pragma omp parallel for schedule(dynamic) if (par)
  for (int r = 0; r < nr; ++r) {
    const auto idx = static_cast<std::size_t>(r);
    try {
      const Interferogram rw =
          resample_counts(with_fut, derive_seed(boot.seed, 2 * static_cast<std::uint64_t>(r) + 1));
      const Interferogram ro = resample_counts(
          without_fut, derive_seed(boot.seed, 2 * static_cast<std::uint64_t>(r) + 2));
      const ExtractionResult res =
          extract_dispersion(rw, ro, env1, env2, fut_length_m, opts);
      d_values[idx] = res.estimate.d_ps_nm_km;
      k2_values[idx] = res.estimate.k2_ps2_km;
      ok[idx] = 1;
    } catch (const std::exception&) {
      ok[idx] = 0;
    }
  }

  std::size_t good = 0;
  double mean_d = 0.0, mean_k2 = 0.0;
  double d_lo = 0.0, d_hi = 0.0;
  for (int r = 0; r < nr; ++r) {
    if (!ok[static_cast<std::size_t>(r)]) continue;
    const double d = d_values[static_cast<std::size_t>(r)];
    if (good == 0) {
      d_lo = d_hi = d;
    } else {
      d_lo = std::min(d_lo, d);
      d_hi = std::max(d_hi, d);
    }
    mean_d += d;
    mean_k2 += k2_values[static_cast<std::size_t>(r)];
    ++good;
  }
  if (static_cast<double>(nr - static_cast<int>(good)) > 0.2 * static_cast<double>(nr))
    throw std::runtime_error("bootstrap_uncertainty: more than 20% of resample fits failed");
  mean_d /= static_cast<double>(good);
  mean_k2 /= static_cast<double>(good);
  double var_d = 0.0, var_k2 = 0.0;
  for (int r = 0; r < nr; ++r) {
    if (!ok[static_cast<std::size_t>(r)]) continue;
    var_d += (d_values[static_cast<std::size_t>(r)] - mean_d) *
             (d_values[static_cast<std::size_t>(r)] - mean_d);
    var_k2 += (k2_values[static_cast<std::size_t>(r)] - mean_k2) *
              (k2_values[static_cast<std::size_t>(r)] - mean_k2);
  }
  if (good > 1) {
    var_d /= static_cast<double>(good - 1);
    var_k2 /= static_cast<double>(good - 1);
  }
  if (d_lo == d_hi) {
    var_d = 0.0;
    var_k2 = 0.0;
  }
  base.sigma_d_bootstrap = std::sqrt(var_d);
  base.sigma_k2_bootstrap = std::sqrt(var_k2);
  return base;
}

}  // namespace biphoton
