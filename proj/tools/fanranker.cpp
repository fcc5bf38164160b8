#include <iostream>

#include "fanranker/cli.hpp"

int main(int argc, char** argv) { return fanranker::run_cli(argc, argv, std::cout, std::cerr); }
