#include <iostream>

#include "bayernet/cli.hpp"

int main(int argc, char** argv) {
  return bayernet::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
