#include "cppruner/cli.hpp"

int main(int argc, char** argv) { return cppruner::cli_main(argc, argv); }
