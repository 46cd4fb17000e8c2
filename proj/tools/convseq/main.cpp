#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  convseq::cli::configure_logging();
  return convseq::cli::run({argv + 1, argv + argc}, std::cout);
}
