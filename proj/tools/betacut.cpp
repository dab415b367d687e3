#include <iostream>

#include "betacut/cli.hpp"

int main(int argc, char** argv) { return betacut::cli::run_command(argc, argv, std::cout, std::cerr); }
