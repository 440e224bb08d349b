#include "stylolab/cli.hpp"

int main(int argc, char** argv) { return stylolab::cli::cli_main(argc, argv); }
