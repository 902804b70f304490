#include <iostream>

#include "avi/cli.hpp"

int main(int argc, char** argv) { return avi::run_cli(argc, argv, std::cout, std::cerr); }
