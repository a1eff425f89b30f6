#include <iostream>
#include <string>
#include <vector>

#include "x2f/cli/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return x2f::cli::run_command(args, std::cout, std::cerr);
}
