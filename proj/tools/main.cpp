#include "masktab/cli/cli.hpp"

int main(int argc, char** argv) { return masktab::cli::dispatch(argc, argv); }
