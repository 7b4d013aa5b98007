// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <string>
#include <vector>

#include "dwf/cli.hpp"
#include "dwf/common.hpp"

int main(int argc, char** argv) {
  dwf::tune_allocator();
  const std::vector<std::string> args(argv + 1, argv + argc);
  return dwf::run_cli(args, std::cout, std::cerr);
}
