#include <iostream>

#include "cmreg/cli.hpp"

int main(int argc, char** argv) { return cmreg::cli::run(argc, argv, std::cout, std::cerr); }
