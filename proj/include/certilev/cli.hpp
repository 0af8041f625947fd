#pragma once

namespace certilev {

// Entry point for the certilev command-line tool. Exit codes: 0 success,
// 2 usage/config/file errors, 3 soundness-audit violation, 1 anything else.
int run_cli(int argc, const char* const* argv);

} // namespace certilev
