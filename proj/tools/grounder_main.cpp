#include "grounder/cli.hpp"

int main(int argc, char** argv) { return grounder::cli_main(argc, argv); }
