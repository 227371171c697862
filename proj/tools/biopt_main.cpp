#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "biopt/config.hpp"
#include "biopt/presets.hpp"
#include "biopt/verify.hpp"

namespace {

struct CliFlags {
  std::string config_path;
  std::string seed;
  std::string out;
  std::string preset;
  std::string log_every;
};

void add_common_flags(CLI::App* cmd, CliFlags& flags) {
  cmd->add_option("--config", flags.config_path, "config file (key = value with [sections])");
  cmd->add_option("--seed", flags.seed, "master seed (u64)");
  cmd->add_option("--out", flags.out, "output directory (default: out)");
  cmd->add_option("--preset", flags.preset,
                  "denoise | mixture | quality | hyperclean | quad-verify | baseline-compare");
  cmd->add_option("--log-every", flags.log_every, "trajectory logging stride");
}

biopt::ExperimentConfig build_config(const CliFlags& flags) {
  biopt::ExperimentConfig cfg;
  if (!flags.config_path.empty())
    cfg = biopt::ExperimentConfig::from_file(flags.config_path);
  cfg.apply_env();
  if (!flags.seed.empty()) cfg.set("seed", flags.seed);
  if (!flags.out.empty()) cfg.set("out", flags.out);
  if (!flags.preset.empty()) cfg.set("preset", flags.preset);
  if (!flags.log_every.empty()) cfg.set("log_every", flags.log_every);
  cfg.validate();
  return cfg;
}

void print_report(const biopt::ExperimentReport& rep) {
  std::printf("preset %s (seed %llu)\n", rep.preset.c_str(),
              static_cast<unsigned long long>(rep.seed));
  for (const auto& v : rep.verdicts) {
    std::printf("  [%s] %-45s measured %-12.6g threshold %-12.6g %s\n",
                v.pass ? "PASS" : "FAIL", v.name.c_str(), v.measured, v.threshold,
                v.detail.c_str());
  }
  int failures = 0;
  for (const auto& v : rep.verdicts)
    if (!v.pass) ++failures;
  if (failures == 0)
    std::printf("all %zu verdicts pass\n", rep.verdicts.size());
  else
    std::printf("%d of %zu verdicts FAILED\n", failures, rep.verdicts.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"first-order bilevel solver for data reweighting"};
  app.require_subcommand(1);

  CliFlags flags;
  CLI::App* cmd_run = app.add_subcommand("run", "run a preset experiment");
  CLI::App* cmd_verify =
      app.add_subcommand("verify", "closed-form diagnostics plus gradient sweeps");
  CLI::App* cmd_compare =
      app.add_subcommand("compare", "wall-clock race against second-order baselines");
  add_common_flags(cmd_run, flags);
  add_common_flags(cmd_verify, flags);
  add_common_flags(cmd_compare, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    biopt::ExperimentConfig cfg = build_config(flags);
    biopt::ExperimentReport report;

    if (cmd_run->parsed()) {
      report = biopt::run_preset(cfg);
    } else if (cmd_compare->parsed()) {
      cfg.set("preset", "baseline-compare");
      report = biopt::run_preset(cfg);
    } else {
      if (!cfg.has("preset")) cfg.set("preset", "quad-verify");
      report = biopt::run_preset(cfg);
      biopt::VerifyOptions opt;
      opt.seed = cfg.get_u64("seed", 1);
      opt.corrupt_gradient = cfg.get_bool("verify.corrupt_gradient", false);
      std::string out = cfg.get_string("out", "out");
      for (auto& row : biopt::verification_sweep(opt, out))
        report.verdicts.push_back(std::move(row));
      biopt::write_report_json(report, out + "/report.json");
    }

    print_report(report);
    return report.all_pass() ? 0 : 1;
  } catch (const biopt::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
