#include "him/cli.hpp"

int main(int argc, char** argv) { return him::cli_main(argc, argv); }
