#include <iostream>

#include "neuroclips/cli.hpp"

int main(int argc, char** argv) { return neuroclips::cli::run(argc, argv, std::cout, std::cerr); }
