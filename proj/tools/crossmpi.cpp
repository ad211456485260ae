// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/cli.hpp"

#include <iostream>

int main(int argc, char **argv) { return crossmpi::cli::run(argc, argv, std::cout, std::cerr); }
