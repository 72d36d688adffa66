#include <iostream>

#include "udet/cli.hpp"

int main(int argc, char** argv) { return udet::run_cli(argc, argv, std::cout, std::cerr); }
