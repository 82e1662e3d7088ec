#include "bayeswork/cli.hpp"

int main(int argc, char** argv) { return bayeswork::run_cli(argc, argv); }
