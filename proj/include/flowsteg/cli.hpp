#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace flowsteg {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfig = 2,
  kExitDivergence = 3,
};

/// Parses and runs one command line. argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast invariant suite: bijectivity, the latent cycle F(G(t)) = t, unbiasedness,
/// gradient checks, exact layout roundtrips and checkpoint roundtrip. Every
/// tolerance is multiplied by `tolerance_scale`; a tiny scale acts as an
/// injected fault.
std::vector<CheckResult> run_selfcheck(double tolerance_scale = 1.0);

}  // namespace flowsteg
