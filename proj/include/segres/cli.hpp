#pragma once

namespace segres {

// Entry point behind the `segres` binary; returns the process exit code.
// Contract: 0 success, 2 usage/config error, 3 runtime numeric abort.
int cli_main(int argc, const char* const* argv);

}  // namespace segres
