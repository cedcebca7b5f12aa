#pragma once

#include <exception>
#include <iosfwd>
#include <string>

#include "mglow/config.hpp"

namespace mglow {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitValidation = 2,
  kExitThreshold = 3,
  kExitNumerical = 4,
};

// Each command validates the configuration before touching the file system,
// writes the resolved configuration into its output directory, and returns an
// exit code. Library errors propagate; exit_code_for maps them.

// Writes source/target field files and manifest.tsv into the data directory.
int cmd_synth(const RunConfig& cfg, std::ostream& log);
// Joint training. Writes metrics.log ("step<TAB>nll"), timing.log and
// checkpoint.ckpt into run.out. `resume` names a checkpoint to continue from.
int cmd_train(const RunConfig& cfg, const std::string& resume, std::ostream& log);
// Generates gen.repeats samples per subject of gen.split into run.out/generated,
// with generation.json recording seeds and temperature.
int cmd_generate(const RunConfig& cfg, std::ostream& log);
// Evaluates run.out/generated against the references; writes run.out/eval.
// Returns kExitThreshold when a configured threshold fails.
int cmd_eval(const RunConfig& cfg, std::ostream& log);
// Oracle suite; kExitThreshold on any failure.
int cmd_check(const RunConfig& cfg, std::ostream& log);

int run_command(const std::string& name, const RunConfig& cfg, const std::string& resume, std::ostream& log);

int exit_code_for(const std::exception& e);

}  // namespace mglow
