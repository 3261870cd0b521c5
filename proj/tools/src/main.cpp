#include <iostream>

#include "iadccn_cli/cli.hpp"

int main(int argc, char** argv) {
    return iadccn::cli::run_cli(argc, argv, std::cout, std::cerr);
}
