#include <iostream>

#include "epcfusion/cli/app.hpp"

int main(int argc, char** argv) { return epcfusion::cli::run_cli(argc, argv, std::cout, std::cerr); }
