#include "sfattack/cli.hpp"

int main(int argc, char** argv) { return sfattack::cli::cli_main(argc, argv); }
