#include <iostream>

#include "cli/commands.hpp"

int main(int argc, char** argv) { return iml::cli::cmd_dispatch(argc, argv, std::cout, std::cerr); }
