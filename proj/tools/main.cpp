#include <iostream>

#include "adapt/cli.hpp"

int main(int argc, char** argv) { return adapt::run_cli(argc, argv, std::cout, std::cerr); }
