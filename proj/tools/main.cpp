#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "biphoton/io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitAcceptance = 4;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON run configuration")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "override the master RNG seed");
  cmd->add_option("--out", args.out_dir, "override the output directory");
  cmd->add_flag("--quiet", args.quiet, "suppress informational output");
}

biphoton::RunConfig resolve(const CommonArgs& args) {
  biphoton::RunConfig config = biphoton::load_config(args.config_path);
  if (args.seed) config.master_seed = *args.seed;
  if (args.out_dir) config.output_dir = *args.out_dir;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Two-source SPDC interferometer simulator and dispersion extraction pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", biphoton::tool_version());

  CommonArgs sim_args;
  CLI::App* sim = app.add_subcommand(
      "simulate", "synthesize interferograms and envelopes onto CSV files");
  add_common(sim, sim_args);

  CommonArgs spec_args;
  std::string spec_input;
  CLI::App* spec = app.add_subcommand(
      "spectrometer", "run a spectrum through the time-of-flight spectrometer model");
  add_common(spec, spec_args);
  spec->add_option("--input", spec_input, "spectrum CSV to measure")
      ->required()
      ->check(CLI::ExistingFile);

  CommonArgs ext_args;
  biphoton::ExtractArgs extract_args;
  CLI::App* ext = app.add_subcommand(
      "extract", "recover D(lambda) from measured interferogram CSV files");
  add_common(ext, ext_args);
  ext->add_option("--with", extract_args.with_files, "with-FUT spectrum CSV (repeatable)")
      ->required();
  ext->add_option("--without", extract_args.without_files,
                  "reference spectrum CSV (repeatable)")
      ->required();
  ext->add_option("--env1", extract_args.env1_files, "source 1 envelope CSV (repeatable)")
      ->required();
  ext->add_option("--env2", extract_args.env2_files, "source 2 envelope CSV (repeatable)")
      ->required();
  ext->add_option("--fut-length", extract_args.fut_length_m,
                  "FUT length in metres (default: from config)");
  ext->add_option("--lambda-deg", extract_args.lambda_deg_nm,
                  "degeneracy wavelength in nm (default: CSV metadata)");

  CommonArgs rt_args;
  CLI::App* rt = app.add_subcommand(
      "roundtrip", "synthesize, optionally measure, extract, and compare to the model");
  add_common(rt, rt_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      biphoton::cmd_simulate(resolve(sim_args), sim_args.quiet);
    } else if (spec->parsed()) {
      biphoton::cmd_spectrometer(resolve(spec_args), spec_input, spec_args.quiet);
    } else if (ext->parsed()) {
      biphoton::cmd_extract(resolve(ext_args), extract_args, ext_args.quiet);
    } else if (rt->parsed()) {
      if (!biphoton::cmd_roundtrip(resolve(rt_args), rt_args.quiet)) return kExitAcceptance;
    }
  } catch (const biphoton::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}
