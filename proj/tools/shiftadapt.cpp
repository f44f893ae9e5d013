#include "shiftadapt/cli/commands.hpp"

int main(int argc, char** argv) { return shiftadapt::cli::run_cli(argc, argv); }
