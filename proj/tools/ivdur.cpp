#include <iostream>

#include "ivdur/cli.hpp"

int main(int argc, char** argv) { return ivdur::run_cli(argc, argv, std::cout, std::cerr); }
