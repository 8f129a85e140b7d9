#include <iostream>
#include <string>
#include <vector>

#include "rrg/cli.h"

int main(int argc, char** argv) {
  rrg::tune_allocator();
  return rrg::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
