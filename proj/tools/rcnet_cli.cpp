#include "rcnet/cli.hpp"

int main(int argc, char** argv) { return rcnet::cli::cli_run(argc, argv); }
