// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace cimn::cli {

// Full command-line entry point (generate | split | train | eval | sweep |
// gradcheck). Returns the process exit code; 0 iff no error path was taken.
int run(int argc, const char* const* argv);

}  // namespace cimn::cli
