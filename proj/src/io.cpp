#include "biphoton/io.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace biphoton {

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_tag(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string fmt_hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%016" PRIx64, v);
  return buf;
}

double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str())
    throw ConfigError(what + ": cannot parse number from '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 0);
  if (end == s.c_str())
    throw ConfigError(what + ": cannot parse integer from '" + s + "'");
  return static_cast<std::uint64_t>(v);
}

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---- config schema -------------------------------------------------------

void check_keys(const json& j, const std::string& context,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(context + ": unknown key '" + it.key() + "'");
  }
}

double get_number(const json& j, const std::string& context, const char* key,
                  double fallback, bool required = false) {
  if (!j.contains(key)) {
    if (required) throw ConfigError(context + ": missing required key '" + key + "'");
    return fallback;
  }
  if (!j.at(key).is_number())
    throw ConfigError(context + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

bool get_bool(const json& j, const std::string& context, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean())
    throw ConfigError(context + "." + key + ": expected a boolean");
  return j.at(key).get<bool>();
}

std::string get_string(const json& j, const std::string& context, const char* key,
                       const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string())
    throw ConfigError(context + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

DispersionModel parse_model(const json& j, const std::string& context) {
  if (!j.is_object() || !j.contains("type"))
    throw ConfigError(context + ": model needs a 'type' key");
  const std::string type = get_string(j, context, "type", "");
  if (type == "spec_sheet") {
    check_keys(j, context, {"type", "lambda0_nm", "s0_ps_nm2_km"});
    SpecSheetModel m;
    m.lambda0_nm = get_number(j, context, "lambda0_nm", 0.0, true);
    m.s0_ps_nm2_km = get_number(j, context, "s0_ps_nm2_km", 0.0, true);
    return m;
  }
  if (type == "taylor_beta") {
    check_keys(j, context,
               {"type", "omega_ref_radps", "lambda_ref_nm", "k2_ps2_km", "k3_ps3_km",
                "k4_ps4_km"});
    TaylorBetaModel m;
    if (j.contains("omega_ref_radps") == j.contains("lambda_ref_nm"))
      throw ConfigError(context +
                        ": give exactly one of 'omega_ref_radps' or 'lambda_ref_nm'");
    m.omega_ref_radps = j.contains("omega_ref_radps")
                            ? get_number(j, context, "omega_ref_radps", 0.0, true)
                            : omega_from_wavelength(
                                  get_number(j, context, "lambda_ref_nm", 0.0, true));
    m.k2_ps2_km = get_number(j, context, "k2_ps2_km", 0.0, true);
    m.k3_ps3_km = get_number(j, context, "k3_ps3_km", 0.0);
    m.k4_ps4_km = get_number(j, context, "k4_ps4_km", 0.0);
    return m;
  }
  if (type == "tabulated_d") {
    check_keys(j, context, {"type", "lambda_nm", "d_ps_nm_km"});
    TabulatedDModel m;
    for (const char* key : {"lambda_nm", "d_ps_nm_km"}) {
      if (!j.contains(key) || !j.at(key).is_array())
        throw ConfigError(context + "." + key + ": expected an array of numbers");
      auto& dst = std::string(key) == "lambda_nm" ? m.lambda_nm : m.d_ps_nm_km;
      for (const auto& v : j.at(key)) {
        if (!v.is_number()) throw ConfigError(context + "." + key + ": expected numbers");
        dst.push_back(v.get<double>());
      }
    }
    return m;
  }
  throw ConfigError(context + ": unknown model type '" + type + "'");
}

FiberSegment parse_segment(const json& j, const std::string& context) {
  check_keys(j, context, {"label", "length_m", "model"});
  FiberSegment seg;
  seg.label = get_string(j, context, "label", "");
  seg.length_m = get_number(j, context, "length_m", 0.0, true);
  if (!(seg.length_m >= 0.0))
    throw ConfigError(context + ".length_m: must be >= 0");
  if (!j.contains("model")) throw ConfigError(context + ": missing 'model'");
  seg.model = parse_model(j.at("model"), context + ".model");
  return seg;
}

SourceSpec parse_source(const json& j, const std::string& context) {
  check_keys(j, context, {"shape", "fwhm_thz", "peak"});
  SourceSpec s;
  const std::string shape = get_string(j, context, "shape", "gaussian");
  if (shape == "gaussian")
    s.shape = EnvelopeShape::gaussian;
  else if (shape == "sinc2")
    s.shape = EnvelopeShape::sinc2;
  else
    throw ConfigError(context + ".shape: expected 'gaussian' or 'sinc2'");
  s.fwhm_thz = get_number(j, context, "fwhm_thz", 12.0);
  s.peak = get_number(j, context, "peak", 1.0);
  if (!(s.fwhm_thz > 0.0)) throw ConfigError(context + ".fwhm_thz: must be positive");
  if (!(s.peak > 0.0)) throw ConfigError(context + ".peak: must be positive");
  return s;
}

json model_to_json(const DispersionModel& m) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SpecSheetModel>) {
          return {{"type", "spec_sheet"},
                  {"lambda0_nm", v.lambda0_nm},
                  {"s0_ps_nm2_km", v.s0_ps_nm2_km}};
        } else if constexpr (std::is_same_v<T, TaylorBetaModel>) {
          return {{"type", "taylor_beta"},
                  {"omega_ref_radps", v.omega_ref_radps},
                  {"k2_ps2_km", v.k2_ps2_km},
                  {"k3_ps3_km", v.k3_ps3_km},
                  {"k4_ps4_km", v.k4_ps4_km}};
        } else {
          return {{"type", "tabulated_d"},
                  {"lambda_nm", v.lambda_nm},
                  {"d_ps_nm_km", v.d_ps_nm_km}};
        }
      },
      m);
}

json segment_to_json(const FiberSegment& s) {
  return {{"label", s.label}, {"length_m", s.length_m}, {"model", model_to_json(s.model)}};
}

json source_to_json(const SourceSpec& s) {
  return {{"shape", s.shape == EnvelopeShape::gaussian ? "gaussian" : "sinc2"},
          {"fwhm_thz", s.fwhm_thz},
          {"peak", s.peak}};
}

json config_to_json(const RunConfig& c) {
  json setup = {
      {"source1", source_to_json(c.setup.source1)},
      {"source2", source_to_json(c.setup.source2)},
      {"internal_poly",
       {{"c0_rad", c.setup.internal_poly.c0_rad},
        {"c2_rad_ps2", c.setup.internal_poly.c2_rad_ps2},
        {"c4_rad_ps4", c.setup.internal_poly.c4_rad_ps4}}},
      {"pump_linewidth_mhz", c.setup.pump_linewidth_mhz},
      {"path_mismatch_m", c.setup.path_mismatch_m},
  };
  json segs = json::array();
  for (const auto& s : c.setup.internal_segments) segs.push_back(segment_to_json(s));
  setup["internal_segments"] = segs;
  if (c.setup.fut) setup["fut"] = segment_to_json(*c.setup.fut);

  json j = {
      {"experiment", c.experiment},
      {"pump_wavelengths_nm", c.pump_wavelengths_nm},
      {"setup", setup},
      {"grid", {{"span_thz", c.grid.span_thz}, {"n_points", c.grid.n_points}}},
      {"spectrometer",
       {{"enabled", c.spectrometer_enabled},
        {"medium_dl_ps_per_nm", c.spectrometer.medium_dl_ps_per_nm},
        {"jitter_fwhm_ps", c.spectrometer.jitter_fwhm_ps},
        {"detector1_jitter_fwhm_ps", c.spectrometer.detector1_jitter_fwhm_ps},
        {"detector2_jitter_fwhm_ps", c.spectrometer.detector2_jitter_fwhm_ps},
        {"bin_width_ps", c.spectrometer.bin_width_ps},
        {"pair_count", c.spectrometer.pair_count},
        {"dark_fraction", c.spectrometer.dark_fraction},
        {"window_halfwidth_nm", c.spectrometer.window_halfwidth_nm}}},
      {"extraction",
       {{"window_halfwidth_thz", c.extraction.window_halfwidth_thz},
        {"include_quartic", c.extraction.include_quartic},
        {"envelope_floor", c.extraction.envelope_floor},
        {"bootstrap_resamples", c.extraction.bootstrap_resamples}}},
      {"roundtrip",
       {{"noiseless_tol_frac", c.roundtrip.noiseless_tol_frac},
        {"noisy_tol_frac", c.roundtrip.noisy_tol_frac},
        {"slope_sigma_factor", c.roundtrip.slope_sigma_factor}}},
      {"output_dir", c.output_dir},
      {"master_seed", c.master_seed},
  };
  if (c.spectrometer_seed_from_config)
    j["spectrometer"]["rng_seed"] = c.spectrometer.rng_seed;
  return j;
}

RunConfig config_from_json(const json& j) {
  check_keys(j, "config",
             {"experiment", "pump_wavelengths_nm", "setup", "grid", "spectrometer",
              "extraction", "roundtrip", "output_dir", "master_seed"});
  RunConfig c;
  c.experiment = get_string(j, "config", "experiment", "unnamed");
  if (!j.contains("pump_wavelengths_nm") || !j.at("pump_wavelengths_nm").is_array())
    throw ConfigError("config.pump_wavelengths_nm: expected an array of 1 or 2 numbers");
  for (const auto& v : j.at("pump_wavelengths_nm")) {
    if (!v.is_number())
      throw ConfigError("config.pump_wavelengths_nm: expected numbers");
    c.pump_wavelengths_nm.push_back(v.get<double>());
  }
  if (c.pump_wavelengths_nm.empty() || c.pump_wavelengths_nm.size() > 2)
    throw ConfigError("config.pump_wavelengths_nm: expected 1 or 2 pump wavelengths");
  for (double p : c.pump_wavelengths_nm)
    if (!(p > 0.0)) throw ConfigError("config.pump_wavelengths_nm: must be positive");
  if (c.pump_wavelengths_nm.size() == 2 &&
      c.pump_wavelengths_nm[0] == c.pump_wavelengths_nm[1])
    throw ConfigError("config.pump_wavelengths_nm: the two pumps must differ");

  if (!j.contains("setup")) throw ConfigError("config: missing 'setup' block");
  const json& js = j.at("setup");
  check_keys(js, "config.setup",
             {"source1", "source2", "internal_segments", "internal_poly", "fut",
              "pump_linewidth_mhz", "path_mismatch_m"});
  if (!js.contains("source1") || !js.contains("source2"))
    throw ConfigError("config.setup: needs 'source1' and 'source2'");
  c.setup.source1 = parse_source(js.at("source1"), "config.setup.source1");
  c.setup.source2 = parse_source(js.at("source2"), "config.setup.source2");
  if (js.contains("internal_segments")) {
    if (!js.at("internal_segments").is_array())
      throw ConfigError("config.setup.internal_segments: expected an array");
    std::size_t i = 0;
    for (const auto& s : js.at("internal_segments"))
      c.setup.internal_segments.push_back(parse_segment(
          s, "config.setup.internal_segments[" + std::to_string(i++) + "]"));
  }
  if (js.contains("internal_poly")) {
    const json& jp = js.at("internal_poly");
    check_keys(jp, "config.setup.internal_poly", {"c0_rad", "c2_rad_ps2", "c4_rad_ps4"});
    c.setup.internal_poly.c0_rad = get_number(jp, "config.setup.internal_poly", "c0_rad", 0.0);
    c.setup.internal_poly.c2_rad_ps2 =
        get_number(jp, "config.setup.internal_poly", "c2_rad_ps2", 0.0);
    c.setup.internal_poly.c4_rad_ps4 =
        get_number(jp, "config.setup.internal_poly", "c4_rad_ps4", 0.0);
  }
  if (js.contains("fut")) c.setup.fut = parse_segment(js.at("fut"), "config.setup.fut");
  c.setup.pump_linewidth_mhz = get_number(js, "config.setup", "pump_linewidth_mhz", 0.1);
  c.setup.path_mismatch_m = get_number(js, "config.setup", "path_mismatch_m", 0.0);
  if (!(c.setup.pump_linewidth_mhz > 0.0))
    throw ConfigError("config.setup.pump_linewidth_mhz: must be positive");
  if (!(c.setup.path_mismatch_m >= 0.0))
    throw ConfigError("config.setup.path_mismatch_m: must be >= 0");

  if (j.contains("grid")) {
    const json& jg = j.at("grid");
    check_keys(jg, "config.grid", {"span_thz", "n_points"});
    c.grid.span_thz = get_number(jg, "config.grid", "span_thz", 10.0);
    const double np = get_number(jg, "config.grid", "n_points", 2001.0);
    c.grid.n_points = static_cast<int>(np);
    if (!(c.grid.span_thz > 0.0)) throw ConfigError("config.grid.span_thz: must be positive");
    if (c.grid.n_points < 2 || static_cast<double>(c.grid.n_points) != np)
      throw ConfigError("config.grid.n_points: must be an integer >= 2");
  }

  if (j.contains("spectrometer")) {
    const json& jt = j.at("spectrometer");
    check_keys(jt, "config.spectrometer",
               {"enabled", "medium_dl_ps_per_nm", "jitter_fwhm_ps",
                "detector1_jitter_fwhm_ps", "detector2_jitter_fwhm_ps", "bin_width_ps",
                "pair_count", "dark_fraction", "rng_seed", "window_halfwidth_nm"});
    c.spectrometer_enabled = get_bool(jt, "config.spectrometer", "enabled", false);
    auto& sc = c.spectrometer;
    sc.medium_dl_ps_per_nm =
        get_number(jt, "config.spectrometer", "medium_dl_ps_per_nm", sc.medium_dl_ps_per_nm);
    sc.jitter_fwhm_ps = get_number(jt, "config.spectrometer", "jitter_fwhm_ps", sc.jitter_fwhm_ps);
    sc.detector1_jitter_fwhm_ps = get_number(jt, "config.spectrometer",
                                             "detector1_jitter_fwhm_ps", 0.0);
    sc.detector2_jitter_fwhm_ps = get_number(jt, "config.spectrometer",
                                             "detector2_jitter_fwhm_ps", 0.0);
    sc.bin_width_ps = get_number(jt, "config.spectrometer", "bin_width_ps", sc.bin_width_ps);
    sc.pair_count = get_number(jt, "config.spectrometer", "pair_count", sc.pair_count);
    sc.dark_fraction = get_number(jt, "config.spectrometer", "dark_fraction", 0.0);
    sc.window_halfwidth_nm =
        get_number(jt, "config.spectrometer", "window_halfwidth_nm", sc.window_halfwidth_nm);
    if (jt.contains("rng_seed")) {
      if (!jt.at("rng_seed").is_number_unsigned())
        throw ConfigError("config.spectrometer.rng_seed: expected a non-negative integer");
      sc.rng_seed = jt.at("rng_seed").get<std::uint64_t>();
      c.spectrometer_seed_from_config = true;
    }
    try {
      validate(sc);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.spectrometer: ") + e.what());
    }
  }

  if (j.contains("extraction")) {
    const json& je = j.at("extraction");
    check_keys(je, "config.extraction",
               {"window_halfwidth_thz", "include_quartic", "envelope_floor",
                "bootstrap_resamples"});
    c.extraction.window_halfwidth_thz =
        get_number(je, "config.extraction", "window_halfwidth_thz", 0.0);
    c.extraction.include_quartic = get_bool(je, "config.extraction", "include_quartic", true);
    c.extraction.envelope_floor = get_number(je, "config.extraction", "envelope_floor", 0.05);
    const double br = get_number(je, "config.extraction", "bootstrap_resamples", 0.0);
    c.extraction.bootstrap_resamples = static_cast<int>(br);
    if (!(c.extraction.window_halfwidth_thz >= 0.0))
      throw ConfigError("config.extraction.window_halfwidth_thz: must be >= 0");
    if (!(c.extraction.envelope_floor > 0.0 && c.extraction.envelope_floor < 1.0))
      throw ConfigError("config.extraction.envelope_floor: must be in (0, 1)");
    if (br < 0.0 || static_cast<double>(c.extraction.bootstrap_resamples) != br ||
        (c.extraction.bootstrap_resamples != 0 && c.extraction.bootstrap_resamples < 50))
      throw ConfigError("config.extraction.bootstrap_resamples: must be 0 or >= 50");
  }

  if (j.contains("roundtrip")) {
    const json& jr = j.at("roundtrip");
    check_keys(jr, "config.roundtrip",
               {"noiseless_tol_frac", "noisy_tol_frac", "slope_sigma_factor"});
    c.roundtrip.noiseless_tol_frac =
        get_number(jr, "config.roundtrip", "noiseless_tol_frac", 0.001);
    c.roundtrip.noisy_tol_frac = get_number(jr, "config.roundtrip", "noisy_tol_frac", 0.01);
    c.roundtrip.slope_sigma_factor =
        get_number(jr, "config.roundtrip", "slope_sigma_factor", 3.0);
    for (double v : {c.roundtrip.noiseless_tol_frac, c.roundtrip.noisy_tol_frac,
                     c.roundtrip.slope_sigma_factor})
      if (!(v > 0.0)) throw ConfigError("config.roundtrip: tolerances must be positive");
  }

  c.output_dir = get_string(j, "config", "output_dir", "out");
  if (j.contains("master_seed")) {
    if (!j.at("master_seed").is_number_unsigned())
      throw ConfigError("config.master_seed: expected a non-negative integer");
    c.master_seed = j.at("master_seed").get<std::uint64_t>();
  }
  return c;
}

// ---- report serialization ------------------------------------------------

json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

double null_or_nan(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null())
    return std::numeric_limits<double>::quiet_NaN();
  return j.at(key).get<double>();
}

json estimate_to_json(const DispersionEstimate& e) {
  return {{"lambda_deg_nm", e.lambda_deg_nm},
          {"k2_ps2_km", e.k2_ps2_km},
          {"sigma_k2_ps2_km", e.sigma_k2_ps2_km},
          {"d_ps_nm_km", e.d_ps_nm_km},
          {"sigma_d_ps_nm_km", e.sigma_d_ps_nm_km},
          {"d_pretty", format_value_uncertainty(e.d_ps_nm_km, e.sigma_d_ps_nm_km)},
          {"fut_length_m", e.fut_length_m},
          {"method", e.method == EstimateMethod::parametric ? "parametric" : "pointwise"},
          {"sigma_d_bootstrap", finite_or_null(e.sigma_d_bootstrap)},
          {"sigma_k2_bootstrap", finite_or_null(e.sigma_k2_bootstrap)}};
}

DispersionEstimate estimate_from_json(const json& j) {
  DispersionEstimate e;
  e.lambda_deg_nm = j.at("lambda_deg_nm").get<double>();
  e.k2_ps2_km = j.at("k2_ps2_km").get<double>();
  e.sigma_k2_ps2_km = j.at("sigma_k2_ps2_km").get<double>();
  e.d_ps_nm_km = j.at("d_ps_nm_km").get<double>();
  e.sigma_d_ps_nm_km = j.at("sigma_d_ps_nm_km").get<double>();
  e.fut_length_m = j.at("fut_length_m").get<double>();
  e.method = j.at("method").get<std::string>() == "pointwise" ? EstimateMethod::pointwise
                                                              : EstimateMethod::parametric;
  e.sigma_d_bootstrap = null_or_nan(j, "sigma_d_bootstrap");
  e.sigma_k2_bootstrap = null_or_nan(j, "sigma_k2_bootstrap");
  return e;
}

json slope_to_json(const SlopeEstimate& s) {
  return {{"s_ps_nm2_km", s.s_ps_nm2_km},
          {"sigma_s", s.sigma_s},
          {"s_pretty", format_value_uncertainty(s.s_ps_nm2_km, s.sigma_s)},
          {"lambda1_nm", s.lambda1_nm},
          {"lambda2_nm", s.lambda2_nm},
          {"midpoint_nm", s.midpoint_nm}};
}

SlopeEstimate slope_from_json(const json& j) {
  SlopeEstimate s;
  s.s_ps_nm2_km = j.at("s_ps_nm2_km").get<double>();
  s.sigma_s = j.at("sigma_s").get<double>();
  s.lambda1_nm = j.at("lambda1_nm").get<double>();
  s.lambda2_nm = j.at("lambda2_nm").get<double>();
  s.midpoint_nm = j.at("midpoint_nm").get<double>();
  return s;
}

json diagnostics_to_json(const PumpDiagnostics& d) {
  return {{"pump_wavelength_nm", d.pump_wavelength_nm},
          {"lambda_deg_nm", d.lambda_deg_nm},
          {"visibility_with", d.visibility_with},
          {"visibility_without", d.visibility_without},
          {"amplitude_scale_with", d.amplitude_scale_with},
          {"amplitude_scale_without", d.amplitude_scale_without},
          {"clipping_fraction_with", d.clipping_fraction_with},
          {"clipping_fraction_without", d.clipping_fraction_without},
          {"residual_rms_with", d.residual_rms_with},
          {"residual_rms_without", d.residual_rms_without},
          {"asymmetry_z_with", d.asymmetry_z_with},
          {"asymmetry_z_without", d.asymmetry_z_without},
          {"coherence_pass", d.coherence_pass},
          {"coherence_ratio", finite_or_null(d.coherence_ratio)}};
}

PumpDiagnostics diagnostics_from_json(const json& j) {
  PumpDiagnostics d;
  d.pump_wavelength_nm = j.at("pump_wavelength_nm").get<double>();
  d.lambda_deg_nm = j.at("lambda_deg_nm").get<double>();
  d.visibility_with = j.at("visibility_with").get<double>();
  d.visibility_without = j.at("visibility_without").get<double>();
  d.amplitude_scale_with = j.at("amplitude_scale_with").get<double>();
  d.amplitude_scale_without = j.at("amplitude_scale_without").get<double>();
  d.clipping_fraction_with = j.at("clipping_fraction_with").get<double>();
  d.clipping_fraction_without = j.at("clipping_fraction_without").get<double>();
  d.residual_rms_with = j.at("residual_rms_with").get<double>();
  d.residual_rms_without = j.at("residual_rms_without").get<double>();
  d.asymmetry_z_with = j.at("asymmetry_z_with").get<double>();
  d.asymmetry_z_without = j.at("asymmetry_z_without").get<double>();
  d.coherence_pass = j.at("coherence_pass").get<bool>();
  d.coherence_ratio = null_or_nan(j, "coherence_ratio");
  return d;
}

// ---- CSV helpers ----------------------------------------------------------

struct CsvDoc {
  std::map<std::string, std::string> meta;
  std::string columns;
  std::vector<std::vector<std::string>> rows;
};

CsvDoc read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  CsvDoc doc;
  std::string line;
  bool have_columns = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      if (!body.empty() && body[0] == ' ') body.erase(0, 1);
      const auto pos = body.find(": ");
      if (pos != std::string::npos)
        doc.meta[body.substr(0, pos)] = body.substr(pos + 2);
      continue;
    }
    if (!have_columns) {
      doc.columns = line;
      have_columns = true;
      continue;
    }
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      if (comma == std::string::npos) {
        cells.push_back(line.substr(start));
        break;
      }
      cells.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    doc.rows.push_back(std::move(cells));
  }
  if (!have_columns) throw ConfigError("'" + path + "': no column header found");
  return doc;
}

std::string meta_or(const CsvDoc& doc, const std::string& key, const std::string& fallback) {
  const auto it = doc.meta.find(key);
  return it == doc.meta.end() ? fallback : it->second;
}

void emit_meta(std::ostringstream& out, const std::string& key, const std::string& value) {
  out << "# " << key << ": " << value << "\n";
}

}  // namespace

std::string tool_version() { return kToolVersion; }

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return config_from_json_text(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string config_hash(const RunConfig& config) {
  return fmt_hex64(fnv1a(config_to_json(config).dump()));
}

InterferometerSetup instantiate_setup(const RunConfig& config, double pump_nm) {
  if (!(pump_nm > 0.0)) throw ConfigError("instantiate_setup: pump must be positive");
  InterferometerSetup s;
  s.pump_wavelength_nm = pump_nm;
  const double omega_deg = 0.5 * omega_from_wavelength(pump_nm);
  auto plant = [omega_deg](const SourceSpec& src) {
    SpdcEnvelope e;
    e.omega_deg_radps = omega_deg;
    e.fwhm_radps = radps_from_thz(src.fwhm_thz);
    e.shape = src.shape;
    e.peak = src.peak;
    return e;
  };
  s.source1 = plant(config.setup.source1);
  s.source2 = plant(config.setup.source2);
  s.internal_segments = config.setup.internal_segments;
  s.internal_poly = config.setup.internal_poly;
  s.fut = config.setup.fut;
  s.pump_linewidth_mhz = config.setup.pump_linewidth_mhz;
  s.path_mismatch_m = config.setup.path_mismatch_m;
  return s;
}

FrequencyGrid make_grid(const GridConfig& grid) {
  FrequencyGrid g;
  g.delta_max_radps = kPi * grid.span_thz;  // half of the full 2*pi*span
  g.delta_min_radps = -g.delta_max_radps;
  g.n_points = grid.n_points;
  return g;
}

PipelineOptions pipeline_options(const RunConfig& config, bool measured_is_counts) {
  PipelineOptions p;
  p.normalize.envelope_floor = config.extraction.envelope_floor;
  p.normalize.auto_scale = measured_is_counts;
  p.fit.window_halfwidth_radps = radps_from_thz(config.extraction.window_halfwidth_thz);
  p.fit.include_quartic = config.extraction.include_quartic;
  return p;
}

void atomic_write_text(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw std::runtime_error("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

void write_spectrum_csv(const std::string& path, const Interferogram& spectrum,
                        const std::string& config_hash_hex) {
  const std::size_t n = spectrum.size();
  if (n == 0 || spectrum.values.size() != n)
    throw std::invalid_argument("write_spectrum_csv: empty or inconsistent spectrum");
  if (!(spectrum.lambda_deg_nm > 0.0))
    throw std::invalid_argument("write_spectrum_csv: lambda_deg metadata missing");
  const bool has_sigma = !spectrum.sigma.empty();
  const double omega_deg = omega_from_wavelength(spectrum.lambda_deg_nm);
  std::ostringstream out;
  emit_meta(out, "file", "spectrum");
  emit_meta(out, "tool_version", kToolVersion);
  emit_meta(out, "config_hash", config_hash_hex);
  emit_meta(out, "setup_hash", fmt_hex64(spectrum.setup_hash));
  emit_meta(out, "origin", spectrum.origin.empty() ? "unknown" : spectrum.origin);
  emit_meta(out, "pump_wavelength_nm", fmt_g17(spectrum.pump_wavelength_nm));
  emit_meta(out, "lambda_deg_nm", fmt_g17(spectrum.lambda_deg_nm));
  emit_meta(out, "with_fut", spectrum.with_fut ? "1" : "0");
  emit_meta(out, "coherence_ok", spectrum.coherence_ok ? "1" : "0");
  emit_meta(out, "n_points", std::to_string(n));
  emit_meta(out, "units", "detuning rad/ps; wavelength nm; intensity relative");
  out << (has_sigma ? "detuning_radps,wavelength_nm,intensity,sigma\n"
                    : "detuning_radps,wavelength_nm,intensity\n");
  for (std::size_t i = 0; i < n; ++i) {
    const double wavelength = wavelength_from_omega(omega_deg + spectrum.detuning_radps[i]);
    out << fmt_g17(spectrum.detuning_radps[i]) << ',' << fmt_g17(wavelength) << ','
        << fmt_g17(spectrum.values[i]);
    if (has_sigma) out << ',' << fmt_g17(spectrum.sigma[i]);
    out << '\n';
  }
  atomic_write_text(path, out.str());
}

Interferogram read_spectrum_csv(const std::string& path) {
  const CsvDoc doc = read_csv(path);
  const bool has_sigma = doc.columns == "detuning_radps,wavelength_nm,intensity,sigma";
  if (!has_sigma && doc.columns != "detuning_radps,wavelength_nm,intensity")
    throw ConfigError("'" + path + "': unexpected spectrum columns '" + doc.columns + "'");
  Interferogram s;
  s.origin = meta_or(doc, "origin", path);
  s.pump_wavelength_nm = parse_double(meta_or(doc, "pump_wavelength_nm", "0"), path);
  s.lambda_deg_nm = parse_double(meta_or(doc, "lambda_deg_nm", "0"), path);
  s.setup_hash = parse_u64(meta_or(doc, "setup_hash", "0"), path);
  s.with_fut = meta_or(doc, "with_fut", "0") == "1";
  s.coherence_ok = meta_or(doc, "coherence_ok", "1") == "1";
  for (const auto& row : doc.rows) {
    if (row.size() != (has_sigma ? 4u : 3u))
      throw ConfigError("'" + path + "': malformed spectrum row");
    s.detuning_radps.push_back(parse_double(row[0], path));
    s.values.push_back(parse_double(row[2], path));
    if (has_sigma) s.sigma.push_back(parse_double(row[3], path));
  }
  if (s.size() < 2) throw ConfigError("'" + path + "': spectrum needs >= 2 rows");
  for (std::size_t i = 1; i < s.size(); ++i)
    if (!(s.detuning_radps[i] > s.detuning_radps[i - 1]))
      throw ConfigError("'" + path + "': detuning column must be strictly increasing");
  return s;
}

void write_histogram_csv(const std::string& path, const TimeDelayHistogram& hist,
                         const std::string& config_hash_hex) {
  std::ostringstream out;
  emit_meta(out, "file", "histogram");
  emit_meta(out, "tool_version", kToolVersion);
  emit_meta(out, "config_hash", config_hash_hex);
  emit_meta(out, "pump_wavelength_nm", fmt_g17(hist.pump_wavelength_nm));
  emit_meta(out, "t_start_ps", fmt_g17(hist.t_start_ps));
  emit_meta(out, "bin_width_ps", fmt_g17(hist.bin_width_ps));
  emit_meta(out, "total_counts", std::to_string(hist.total_counts));
  emit_meta(out, "dropped", std::to_string(hist.dropped));
  emit_meta(out, "medium_dl_ps_per_nm", fmt_g17(hist.config.medium_dl_ps_per_nm));
  emit_meta(out, "jitter_fwhm_ps", fmt_g17(hist.config.jitter_fwhm_ps));
  emit_meta(out, "detector1_jitter_fwhm_ps", fmt_g17(hist.config.detector1_jitter_fwhm_ps));
  emit_meta(out, "detector2_jitter_fwhm_ps", fmt_g17(hist.config.detector2_jitter_fwhm_ps));
  emit_meta(out, "pair_count", fmt_g17(hist.config.pair_count));
  emit_meta(out, "dark_fraction", fmt_g17(hist.config.dark_fraction));
  emit_meta(out, "rng_seed", std::to_string(hist.config.rng_seed));
  emit_meta(out, "window_halfwidth_nm", fmt_g17(hist.config.window_halfwidth_nm));
  emit_meta(out, "source_setup_hash", fmt_hex64(hist.source_setup_hash));
  emit_meta(out, "source_with_fut", hist.source_with_fut ? "1" : "0");
  emit_meta(out, "units", "bin_center ps; counts coincidences");
  out << "bin_center_ps,counts\n";
  for (std::size_t i = 0; i < hist.size(); ++i)
    out << fmt_g17(hist.bin_center(i)) << ',' << hist.counts[i] << '\n';
  atomic_write_text(path, out.str());
}

TimeDelayHistogram read_histogram_csv(const std::string& path) {
  const CsvDoc doc = read_csv(path);
  if (doc.columns != "bin_center_ps,counts")
    throw ConfigError("'" + path + "': unexpected histogram columns '" + doc.columns + "'");
  TimeDelayHistogram h;
  h.pump_wavelength_nm = parse_double(meta_or(doc, "pump_wavelength_nm", "0"), path);
  h.t_start_ps = parse_double(meta_or(doc, "t_start_ps", "0"), path);
  h.bin_width_ps = parse_double(meta_or(doc, "bin_width_ps", "0"), path);
  h.config.medium_dl_ps_per_nm =
      parse_double(meta_or(doc, "medium_dl_ps_per_nm", "340"), path);
  h.config.jitter_fwhm_ps = parse_double(meta_or(doc, "jitter_fwhm_ps", "0"), path);
  h.config.detector1_jitter_fwhm_ps =
      parse_double(meta_or(doc, "detector1_jitter_fwhm_ps", "0"), path);
  h.config.detector2_jitter_fwhm_ps =
      parse_double(meta_or(doc, "detector2_jitter_fwhm_ps", "0"), path);
  h.config.bin_width_ps = h.bin_width_ps;
  h.config.pair_count = parse_double(meta_or(doc, "pair_count", "1"), path);
  h.config.dark_fraction = parse_double(meta_or(doc, "dark_fraction", "0"), path);
  h.config.rng_seed = parse_u64(meta_or(doc, "rng_seed", "0"), path);
  h.config.window_halfwidth_nm =
      parse_double(meta_or(doc, "window_halfwidth_nm", "100"), path);
  h.source_setup_hash = parse_u64(meta_or(doc, "source_setup_hash", "0"), path);
  h.source_with_fut = meta_or(doc, "source_with_fut", "0") == "1";
  for (const auto& row : doc.rows) {
    if (row.size() != 2) throw ConfigError("'" + path + "': malformed histogram row");
    h.counts.push_back(parse_u64(row[1], path));
  }
  if (h.counts.empty()) throw ConfigError("'" + path + "': histogram has no bins");
  std::uint64_t sum = 0;
  for (auto c : h.counts) sum += c;
  h.total_counts = sum;
  const auto it = doc.meta.find("dropped");
  h.dropped = it == doc.meta.end() ? 0 : parse_u64(it->second, path);
  return h;
}

void write_phase_csv(const std::string& path, const PhaseTrace& trace,
                     const std::string& config_hash_hex) {
  std::ostringstream out;
  emit_meta(out, "file", "phase_trace");
  emit_meta(out, "tool_version", kToolVersion);
  emit_meta(out, "config_hash", config_hash_hex);
  emit_meta(out, "lambda_deg_nm", fmt_g17(trace.lambda_deg_nm));
  emit_meta(out, "asymmetry_rms", fmt_g17(trace.asymmetry));
  emit_meta(out, "asymmetry_z", fmt_g17(trace.asymmetry_z));
  emit_meta(out, "units", "detuning rad/ps; phase rad; sigma rad");
  out << "detuning_radps,phase_rad,sigma_rad\n";
  for (std::size_t i = 0; i < trace.detuning_radps.size(); ++i) {
    if (!trace.mask[i]) continue;
    out << fmt_g17(trace.detuning_radps[i]) << ',' << fmt_g17(trace.phase_rad[i]) << ','
        << fmt_g17(trace.sigma_rad[i]) << '\n';
  }
  atomic_write_text(path, out.str());
}

std::string report_to_json_text(const Report& report) {
  json j = {{"tool_version", report.tool_version},
            {"config_hash", report.config_hash},
            {"seed", report.seed},
            {"experiment", report.experiment}};
  json est = json::array();
  for (const auto& e : report.estimates) est.push_back(estimate_to_json(e));
  j["estimates"] = est;
  j["slope"] = report.slope ? slope_to_json(*report.slope) : json(nullptr);
  json diag = json::array();
  for (const auto& d : report.diagnostics) diag.push_back(diagnostics_to_json(d));
  j["diagnostics"] = diag;
  return j.dump(2) + "\n";
}

Report report_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("report parse error: ") + e.what());
  }
  Report r;
  r.tool_version = j.at("tool_version").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.experiment = j.at("experiment").get<std::string>();
  for (const auto& e : j.at("estimates")) r.estimates.push_back(estimate_from_json(e));
  if (!j.at("slope").is_null()) r.slope = slope_from_json(j.at("slope"));
  for (const auto& d : j.at("diagnostics")) r.diagnostics.push_back(diagnostics_from_json(d));
  return r;
}

void write_report(const std::string& path, const Report& report) {
  atomic_write_text(path, report_to_json_text(report));
}

Report read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open report '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return report_from_json_text(buf.str());
}

std::string format_value_uncertainty(double value, double sigma) {
  char buf[80];
  if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(value)) {
    std::snprintf(buf, sizeof buf, "%g", value);
    return buf;
  }
  int e = static_cast<int>(std::floor(std::log10(sigma)));
  int ndigits = sigma / std::pow(10.0, e) < 2.0 ? 2 : 1;
  int place = e - (ndigits - 1);
  long long digits = std::llround(sigma / std::pow(10.0, place));
  if (ndigits == 1 && digits >= 10) {
    digits = std::llround(sigma / std::pow(10.0, ++place));
  } else if (ndigits == 2 && digits >= 100) {
    digits = std::llround(sigma / std::pow(10.0, ++place));
  }
  if (place >= 0) {
    const double scale = std::pow(10.0, place);
    std::snprintf(buf, sizeof buf, "%.0f(%lld)", std::round(value / scale) * scale,
                  digits * static_cast<long long>(scale));
    return buf;
  }
  const int decimals = -place;
  std::snprintf(buf, sizeof buf, "%.*f(%lld)", decimals, value, digits);
  return buf;
}

std::pair<double, double> parse_value_uncertainty(const std::string& text) {
  const auto open = text.find('(');
  const auto close = text.find(')', open == std::string::npos ? 0 : open);
  if (open == std::string::npos || close == std::string::npos || close < open + 2)
    throw ConfigError("parse_value_uncertainty: expected 'value(sigma)' in '" + text + "'");
  const std::string value_part = text.substr(0, open);
  const std::string sigma_part = text.substr(open + 1, close - open - 1);
  const double value = parse_double(value_part, "parse_value_uncertainty");
  for (char ch : sigma_part)
    if (!std::isdigit(static_cast<unsigned char>(ch)))
      throw ConfigError("parse_value_uncertainty: sigma digits must be integers in '" +
                        text + "'");
  const double digits = parse_double(sigma_part, "parse_value_uncertainty");
  const auto dot = value_part.find('.');
  const int decimals =
      dot == std::string::npos ? 0 : static_cast<int>(value_part.size() - dot - 1);
  return {value, digits * std::pow(10.0, -decimals)};
}

// ---- subcommands -----------------------------------------------------------

namespace {

std::string pump_tag(double pump_nm) { return "pump" + fmt_tag(pump_nm); }

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

PumpDiagnostics make_diagnostics(const ExtractionResult& res, double pump_nm,
                                 double lambda_deg_nm) {
  PumpDiagnostics d;
  d.pump_wavelength_nm = pump_nm;
  d.lambda_deg_nm = lambda_deg_nm;
  d.visibility_with = res.fit_with.visibility;
  d.visibility_without = res.fit_without.visibility;
  d.amplitude_scale_with = res.fit_with.amplitude_scale;
  d.amplitude_scale_without = res.fit_without.amplitude_scale;
  d.clipping_fraction_with = res.norm_with.clipping_fraction;
  d.clipping_fraction_without = res.norm_without.clipping_fraction;
  d.residual_rms_with = res.fit_with.residual_rms;
  d.residual_rms_without = res.fit_without.residual_rms;
  d.asymmetry_z_with = normalized_asymmetry(res.norm_with).z;
  d.asymmetry_z_without = normalized_asymmetry(res.norm_without).z;
  return d;
}

std::vector<double> masked_detunings(const NormalizedSpectrum& ns) {
  std::vector<double> out;
  for (std::size_t i = 0; i < ns.size(); ++i)
    if (ns.mask[i]) out.push_back(ns.detuning_radps[i]);
  return out;
}

}  // namespace

void cmd_simulate(const RunConfig& config, bool quiet) {
  fs::create_directories(config.output_dir);
  const std::string hash = config_hash(config);
  const FrequencyGrid grid = make_grid(config.grid);
  for (double pump : config.pump_wavelengths_nm) {
    const InterferometerSetup setup = instantiate_setup(config, pump);
    const std::string tag = pump_tag(pump);

    InterferometerSetup internal_only = setup;
    internal_only.fut.reset();
    const Interferogram without = synthesize(internal_only, grid);
    write_spectrum_csv(join_path(config.output_dir, "spectrum_" + tag + "_without_fut.csv"),
                       without, hash);
    if (setup.fut) {
      const Interferogram with = synthesize(setup, grid);
      write_spectrum_csv(join_path(config.output_dir, "spectrum_" + tag + "_with_fut.csv"),
                         with, hash);
      if (!with.coherence_ok && !quiet)
        std::cout << "notice: pump coherence criterion fails for " << tag
                  << "; fringes are flagged in the file header\n";
    } else if (!quiet) {
      std::cout << "notice: no FUT configured; wrote only the reference spectrum for "
                << tag << "\n";
    }
    write_spectrum_csv(join_path(config.output_dir, "envelope1_" + tag + ".csv"),
                       sample_envelope(setup.source1, grid), hash);
    write_spectrum_csv(join_path(config.output_dir, "envelope2_" + tag + ".csv"),
                       sample_envelope(setup.source2, grid), hash);
  }
  if (!quiet) std::cout << "simulate: wrote spectra to " << config.output_dir << "\n";
}

void cmd_spectrometer(const RunConfig& config, const std::string& input_csv, bool quiet) {
  fs::create_directories(config.output_dir);
  const std::string hash = config_hash(config);
  const Interferogram spectrum = read_spectrum_csv(input_csv);
  if (!(spectrum.pump_wavelength_nm > 0.0))
    throw ConfigError("'" + input_csv + "': missing pump_wavelength_nm metadata");
  SpectrometerConfig sc = config.spectrometer;
  if (!config.spectrometer_seed_from_config)
    sc.rng_seed = derive_seed(config.master_seed, 100);
  const TimeDelayHistogram hist = sample_events(spectrum, sc, spectrum.pump_wavelength_nm);
  const Interferogram recovered = histogram_to_spectrum(hist, spectrum.pump_wavelength_nm);
  const std::string stem = fs::path(input_csv).stem().string();
  write_histogram_csv(join_path(config.output_dir, stem + "_histogram.csv"), hist, hash);
  write_spectrum_csv(join_path(config.output_dir, stem + "_recovered.csv"), recovered, hash);
  if (!quiet)
    std::cout << "spectrometer: " << hist.total_counts << " counts in " << hist.size()
              << " bins (dropped " << hist.dropped << ")\n";
}

Report cmd_extract(const RunConfig& config, const ExtractArgs& args, bool quiet) {
  const std::size_t n = args.with_files.size();
  if (n == 0 || n > 2 || args.without_files.size() != n || args.env1_files.size() != n ||
      args.env2_files.size() != n)
    throw ConfigError("cmd_extract: need 1 or 2 matched (with, without, env1, env2) sets");
  double fut_length = args.fut_length_m;
  if (!(fut_length > 0.0) && config.setup.fut) fut_length = config.setup.fut->length_m;
  if (!(fut_length > 0.0))
    throw ConfigError("cmd_extract: FUT length unknown (flag or config required)");
  fs::create_directories(config.output_dir);
  const std::string hash = config_hash(config);

  Report report;
  report.tool_version = kToolVersion;
  report.config_hash = hash;
  report.seed = config.master_seed;
  report.experiment = config.experiment;

  for (std::size_t i = 0; i < n; ++i) {
    const Interferogram with = read_spectrum_csv(args.with_files[i]);
    const Interferogram without = read_spectrum_csv(args.without_files[i]);
    const Interferogram env1 = read_spectrum_csv(args.env1_files[i]);
    const Interferogram env2 = read_spectrum_csv(args.env2_files[i]);
    const bool counts_scaled = !with.sigma.empty() || with.origin == "spectrometer";
    const PipelineOptions opts = pipeline_options(config, counts_scaled);
    ExtractionResult res = extract_dispersion(with, without, env1, env2, fut_length, opts);
    double lambda_deg = args.lambda_deg_nm.value_or(with.lambda_deg_nm);
    if (args.lambda_deg_nm)
      res.estimate = estimate_dispersion(res.coeffs, fut_length, lambda_deg,
                                         EstimateMethod::parametric);
    DispersionEstimate est = res.estimate;
    if (config.extraction.bootstrap_resamples > 0) {
      BootstrapOptions boot;
      boot.n_resamples = config.extraction.bootstrap_resamples;
      boot.seed = derive_seed(config.master_seed, 4 * i + 3);
      est = bootstrap_uncertainty(with, without, env1, env2, fut_length, opts, boot);
      if (args.lambda_deg_nm) {
        const double rescale = est.sigma_d_bootstrap / std::max(est.sigma_d_ps_nm_km, 1e-300);
        est.lambda_deg_nm = lambda_deg;
        est.d_ps_nm_km = res.estimate.d_ps_nm_km;
        est.sigma_d_ps_nm_km = res.estimate.sigma_d_ps_nm_km;
        est.sigma_d_bootstrap = res.estimate.sigma_d_ps_nm_km * rescale;
      }
    }
    if (std::abs(res.coeffs.dc2_rad_ps2) < 1e-12 && !quiet)
      std::cout << "warning: with-FUT and reference phases are identical; D = 0\n";
    report.estimates.push_back(est);
    PumpDiagnostics diag = make_diagnostics(res, with.pump_wavelength_nm, lambda_deg);
    const CoherenceResult coh =
        coherence_check(config.setup.pump_linewidth_mhz, config.setup.path_mismatch_m);
    diag.coherence_pass = with.coherence_ok && coh.pass;
    diag.coherence_ratio = std::min(coh.ratio, 1e300);
    report.diagnostics.push_back(diag);

    PhaseTrace trace = phase_from_coefficients(
        res.coeffs, masked_detunings(res.norm_with), lambda_deg);
    const AsymmetryResult asym = normalized_asymmetry(res.norm_with);
    trace.asymmetry = asym.rms;
    trace.asymmetry_z = asym.z;
    write_phase_csv(join_path(config.output_dir,
                              "phase_fut_" + pump_tag(with.pump_wavelength_nm) + ".csv"),
                    trace, hash);
  }
  if (n == 2) report.slope = slope_from_two(report.estimates[0], report.estimates[1]);
  write_report(join_path(config.output_dir, "report.json"), report);
  if (!quiet) {
    for (const auto& e : report.estimates)
      std::cout << "D(" << fmt_tag(e.lambda_deg_nm)
                << " nm) = " << format_value_uncertainty(e.d_ps_nm_km, e.sigma_d_ps_nm_km)
                << " ps/nm/km\n";
    if (report.slope)
      std::cout << "slope = "
                << format_value_uncertainty(report.slope->s_ps_nm2_km, report.slope->sigma_s)
                << " ps/nm^2/km\n";
  }
  return report;
}

bool cmd_roundtrip(const RunConfig& config, bool quiet) {
  fs::create_directories(config.output_dir);
  const std::string hash = config_hash(config);
  const FrequencyGrid grid = make_grid(config.grid);
  const bool noisy = config.spectrometer_enabled;

  Report report;
  report.tool_version = kToolVersion;
  report.config_hash = hash;
  report.seed = config.master_seed;
  report.experiment = config.experiment;

  bool all_pass = true;
  auto verdict = [&](bool pass, const std::string& text) {
    all_pass = all_pass && pass;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << text << "\n";
  };

  std::vector<DispersionEstimate> estimates;
  std::vector<double> truths;

  for (std::size_t i = 0; i < config.pump_wavelengths_nm.size(); ++i) {
    const double pump = config.pump_wavelengths_nm[i];
    const std::string tag = pump_tag(pump);
    const InterferometerSetup setup = instantiate_setup(config, pump);
    const double lambda_deg = setup.lambda_deg();

    InterferometerSetup internal_only = setup;
    internal_only.fut.reset();
    const Interferogram synth_with = synthesize(setup, grid);
    const Interferogram synth_without = synthesize(internal_only, grid);
    const Interferogram env1 = sample_envelope(setup.source1, grid);
    const Interferogram env2 = sample_envelope(setup.source2, grid);
    write_spectrum_csv(join_path(config.output_dir, "spectrum_" + tag + "_with_fut.csv"),
                       synth_with, hash);
    write_spectrum_csv(join_path(config.output_dir, "spectrum_" + tag + "_without_fut.csv"),
                       synth_without, hash);
    write_spectrum_csv(join_path(config.output_dir, "envelope1_" + tag + ".csv"), env1, hash);
    write_spectrum_csv(join_path(config.output_dir, "envelope2_" + tag + ".csv"), env2, hash);

    Interferogram measured_with = synth_with;
    Interferogram measured_without = synth_without;
    if (noisy) {
      SpectrometerConfig sc = config.spectrometer;
      sc.rng_seed = derive_seed(config.master_seed, 8 * i + 1);
      const TimeDelayHistogram hist_with = sample_events(synth_with, sc, pump);
      sc.rng_seed = derive_seed(config.master_seed, 8 * i + 2);
      const TimeDelayHistogram hist_without = sample_events(synth_without, sc, pump);
      write_histogram_csv(join_path(config.output_dir, "histogram_" + tag + "_with_fut.csv"),
                          hist_with, hash);
      write_histogram_csv(
          join_path(config.output_dir, "histogram_" + tag + "_without_fut.csv"),
          hist_without, hash);
      measured_with = histogram_to_spectrum(hist_with, pump);
      measured_without = histogram_to_spectrum(hist_without, pump);
      write_spectrum_csv(join_path(config.output_dir, "recovered_" + tag + "_with_fut.csv"),
                         measured_with, hash);
      write_spectrum_csv(
          join_path(config.output_dir, "recovered_" + tag + "_without_fut.csv"),
          measured_without, hash);
    }

    const CoherenceResult coh =
        coherence_check(setup.pump_linewidth_mhz, setup.path_mismatch_m);
    const double fut_length = setup.fut ? setup.fut->length_m : 0.0;
    const PipelineOptions opts = pipeline_options(config, noisy);

    if (fut_length > 0.0) {
      ExtractionResult res = extract_dispersion(measured_with, measured_without, env1, env2,
                                                fut_length, opts);
      DispersionEstimate est = res.estimate;
      if (config.extraction.bootstrap_resamples > 0) {
        BootstrapOptions boot;
        boot.n_resamples = config.extraction.bootstrap_resamples;
        boot.seed = derive_seed(config.master_seed, 8 * i + 3);
        est = bootstrap_uncertainty(measured_with, measured_without, env1, env2, fut_length,
                                    opts, boot);
      }
      const double truth = d_param(setup.fut->model, lambda_deg);
      const double tol_frac =
          noisy ? config.roundtrip.noisy_tol_frac : config.roundtrip.noiseless_tol_frac;
      const double tol =
          std::max(tol_frac * std::abs(truth), 3.0 * est.sigma_d_ps_nm_km);
      const double err = std::abs(est.d_ps_nm_km - truth);
      {
        std::ostringstream line;
        line << tag << ": D(" << fmt_tag(lambda_deg) << " nm) recovered "
             << format_value_uncertainty(est.d_ps_nm_km, est.sigma_d_ps_nm_km)
             << " vs model " << fmt_tag(truth) << " ps/nm/km (|err| " << fmt_tag(err)
             << ", tol " << fmt_tag(tol) << ")";
        verdict(err <= tol, line.str());
      }
      estimates.push_back(est);
      truths.push_back(truth);
      report.estimates.push_back(est);

      PumpDiagnostics diag = make_diagnostics(res, pump, lambda_deg);
      diag.coherence_pass = coh.pass;
      diag.coherence_ratio = std::min(coh.ratio, 1e300);
      report.diagnostics.push_back(diag);

      PhaseTrace trace = phase_from_coefficients(
          res.coeffs, masked_detunings(res.norm_with), lambda_deg);
      const AsymmetryResult asym = normalized_asymmetry(res.norm_with);
      trace.asymmetry = asym.rms;
      trace.asymmetry_z = asym.z;
      write_phase_csv(join_path(config.output_dir, "phase_fut_" + tag + ".csv"), trace, hash);
    } else {
      // No FUT (or zero length): the subtracted quadratic phase must be
      // consistent with zero.
      auto normalize_one = [&](const Interferogram& m) {
        const Interferogram e1 = resample_onto(env1, m.detuning_radps);
        const Interferogram e2 = resample_onto(env2, m.detuning_radps);
        return normalize(m, e1, e2, opts.normalize);
      };
      const NormalizedSpectrum nw = normalize_one(measured_with);
      const NormalizedSpectrum nwo = normalize_one(measured_without);
      const RaisedCosineFit fw = fit_raised_cosine(nw, opts.fit);
      const RaisedCosineFit fwo = fit_raised_cosine(nwo, opts.fit);
      const SubtractedCoefficients dc = subtract_reference(fw, fwo);
      const double tol = std::max(3.0 * dc.sigma_dc2, 1e-9);
      std::ostringstream line;
      line << tag << ": zero-length FUT, |dc2| " << fmt_tag(std::abs(dc.dc2_rad_ps2))
           << " rad ps^2 consistent with 0 (tol " << fmt_tag(tol) << ")";
      verdict(std::abs(dc.dc2_rad_ps2) <= tol, line.str());
    }
    if (!coh.pass)
      std::cout << "notice: pump coherence criterion fails (ratio "
                << fmt_tag(std::min(coh.ratio, 1e300)) << " < 100)\n";
  }

  if (estimates.size() == 2) {
    const SlopeEstimate slope = slope_from_two(estimates[0], estimates[1]);
    report.slope = slope;
    const double truth_slope = (truths[0] - truths[1]) /
                               (estimates[0].lambda_deg_nm - estimates[1].lambda_deg_nm);
    const double tol =
        std::max(config.roundtrip.slope_sigma_factor * slope.sigma_s, 1e-4);
    const double err = std::abs(slope.s_ps_nm2_km - truth_slope);
    std::ostringstream line;
    line << "slope(" << fmt_tag(slope.midpoint_nm) << " nm) recovered "
         << format_value_uncertainty(slope.s_ps_nm2_km, slope.sigma_s) << " vs model "
         << fmt_tag(truth_slope) << " ps/nm^2/km (|err| " << fmt_tag(err) << ", tol "
         << fmt_tag(tol) << ")";
    verdict(err <= tol, line.str());
  }

  write_report(join_path(config.output_dir, "report.json"), report);
  std::cout << (all_pass ? "ROUNDTRIP PASS" : "ROUNDTRIP FAIL") << "\n";
  (void)quiet;
  return all_pass;
}

}  // namespace biphoton
