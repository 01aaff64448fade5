#include <iostream>

#include "sonic/cli.hpp"

int main(int argc, char** argv) { return sonic::cli::run(argc, argv, std::cout, std::cerr); }
