#include <iostream>

#include "ripnerf/cli.hpp"

int main(int argc, char** argv) {
  return ripnerf::cli::run_cli(argc, argv, std::cout, std::cerr);
}
