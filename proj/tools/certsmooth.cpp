#include <iostream>

#include "certsmooth/cli.hpp"

int main(int argc, char** argv) { return certsmooth::run_cli(argc, argv, std::cout, std::cerr); }
