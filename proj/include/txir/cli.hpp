#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace txir {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Subcommands: synth, train, eval, predict, ablate, gradcheck, embed.
/// Summary lines go to `out` as key=value; diagnostics go to `err`.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace txir
