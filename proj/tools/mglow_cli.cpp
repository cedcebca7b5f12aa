#include <CLI11.hpp>
#include <iostream>

#include "mglow/commands.hpp"
#include "mglow/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Manifold-valued GLOW flows: synthetic data, training, generation and evaluation"};
  std::string command, config_path, resume, out;
  std::uint64_t seed = 0;
  int threads = 0;
  double temperature = 0.0;
  std::vector<std::string> overrides;
  app.add_option("command", command, "synth | train | generate | eval | check")
      ->required()
      ->check(CLI::IsMember({"synth", "train", "generate", "eval", "check"}));
  app.add_option("--config", config_path, "YAML configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "global seed (run.seed)");
  auto* threads_opt = app.add_option("--threads", threads, "worker thread cap (run.threads)");
  auto* out_opt = app.add_option("--out", out, "output directory (run.out)");
  auto* temp_opt = app.add_option("--temperature", temperature, "sampling temperature (gen.temperature)");
  app.add_option("--resume", resume, "checkpoint to resume training from");
  app.add_option("--set", overrides, "override a configuration key, key=value (repeatable)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mglow::kExitValidation;
  }

  try {
    mglow::RunConfig cfg = config_path.empty() ? mglow::RunConfig() : mglow::RunConfig::from_file(config_path);
    for (const auto& o : overrides) cfg.set_override(o);
    if (*seed_opt) cfg.set("run.seed", std::to_string(seed));
    if (*threads_opt) cfg.set("run.threads", std::to_string(threads));
    if (*out_opt) cfg.set("run.out", out);
    if (*temp_opt) cfg.set("gen.temperature", std::to_string(temperature));
    return mglow::run_command(command, cfg, resume, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "mglow " << command << ": " << e.what() << "\n";
    return mglow::exit_code_for(e);
  }
}
