// SPDX-License-Identifier: Apache-2.0
/**
 * @file   sylstm.cpp
 * @brief  Command-line entry point.
 */
#include "sylstm/cli.hpp"

int main(int argc, char **argv) { return sylstm::cli::run(argc, argv); }
