#include "gxestat/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return gxe::run_cli(argc, argv, std::cout, std::cerr); }
