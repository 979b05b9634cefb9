// SPDX-License-Identifier: Apache-2.0
#include "cimn/cli.hpp"

int main(int argc, char** argv) { return cimn::cli::run(argc, argv); }
