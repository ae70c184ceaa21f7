#pragma once

// The `specnet` command line. Subcommands: synth, train {preproc|calib|e2e},
// preprocess, calibrate, evaluate, gradcheck, bench.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure,
// 4 verification failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace specnet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3, kVerifyFailed = 4 };

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Splices the flags of every `--config file.json` (a flat object of flag name
// to value) in front of the explicit flags of the innermost subcommand, so
// explicit flags win. `true` becomes a bare flag, `false` is dropped and
// arrays repeat the flag.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

}  // namespace specnet::cli
