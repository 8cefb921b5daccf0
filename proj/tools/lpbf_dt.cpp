#include "lpbf/cli.hpp"

int main(int argc, char** argv) { return lpbf::cli::cli_dispatch(argc, argv); }
