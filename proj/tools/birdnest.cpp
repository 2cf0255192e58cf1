#include "birdnest/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return birdnest::cli::parse_and_run(argc, argv, std::cout, std::cerr);
}
