#include <iostream>

#include "ccnn/cli.hpp"

int main(int argc, char** argv) { return ccnn::run_cli(argc, argv, std::cout, std::cerr); }
