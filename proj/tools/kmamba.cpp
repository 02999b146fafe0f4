#include <iostream>

#include "kmamba/cli.hpp"

int main(int argc, char** argv) { return kmamba::cli::run(argc, argv, std::cout, std::cerr); }
