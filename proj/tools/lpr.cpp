#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "lpr/runtime.hpp"

int main(int argc, char** argv) {
  lpr::tune_allocator();
  const std::vector<std::string> args(argv + 1, argv + argc);
  return lpr::run_cli(args, std::cout, std::cerr);
}
