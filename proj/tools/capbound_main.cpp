#include <iostream>

#include "capbound/cli.hpp"

int main(int argc, char** argv) { return capbound::run_cli(argc, argv, std::cout, std::cerr); }
