// collapse: run measurement scenarios, invariant suites and trajectory traces.

#include <CLI11.hpp>

#include "collapse/commands.hpp"
#include "collapse/platform.hpp"

int main(int argc, char** argv) {
  using namespace collapse;
  tune_allocator();
  CLI::App app{"Branch-weight collapse simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string config, out_dir, engine, level = "fast";
  std::uint64_t seed = 0;
  long trials = 0;
  int threads = 0;
  auto add_overrides = [&](CLI::App* cmd, bool with_trials) {
    cmd->add_option("--config", config, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out_dir, "Output directory (replaced atomically)")->required();
    cmd->add_option("--seed", seed, "Override the master seed");
    if (with_trials) cmd->add_option("--trials", trials, "Override trials per setting")->check(CLI::PositiveNumber);
    cmd->add_option("--engine", engine, "Override the engine")->check(CLI::IsMember({"full", "product", "ruin"}));
  };

  CLI::App* run = app.add_subcommand("run", "Run a scenario and write manifest, trials and summary");
  add_overrides(run, true);
  run->add_option("--threads", threads, "Worker threads (default: $COLLAPSE_THREADS or all cores)")
      ->check(CLI::PositiveNumber);

  CLI::App* validate = app.add_subcommand("validate", "Run the invariant suites");
  validate->add_option("--level", level, "fast or full")->check(CLI::IsMember({"fast", "full"}));

  CLI::App* trace = app.add_subcommand("trace", "Record one full or product trajectory as CSV");
  add_overrides(trace, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  auto overrides = [&](CLI::App* cmd) {
    RunOverrides o;
    if (cmd->count("--seed")) o.seed = seed;
    if (cmd->get_option_no_throw("--trials") && cmd->count("--trials")) o.trials = trials;
    if (cmd->count("--engine")) o.engine = engine;
    o.threads = threads;
    return o;
  };
  try {
    if (*run) return cmd_run(config, out_dir, overrides(run));
    if (*trace) return cmd_trace(config, out_dir, overrides(trace));
    return cmd_validate(level == "full" ? ValidationLevel::full : ValidationLevel::fast);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
