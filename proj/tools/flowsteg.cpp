#include <iostream>

#include "flowsteg/cli.hpp"

int main(int argc, char** argv) { return flowsteg::run_cli(argc, argv, std::cout, std::cerr); }
