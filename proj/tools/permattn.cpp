#include <iostream>

#include "permattn/cli.hpp"

int main(int argc, char** argv) { return permattn::run_cli(argc, argv, std::cout, std::cerr); }
