#include <iostream>

#include "kpn/cli.hpp"

int main(int argc, char** argv) { return kpn::run_cli(argc, argv, std::cout, std::cerr); }
