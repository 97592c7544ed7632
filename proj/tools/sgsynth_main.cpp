#include "sgs/cli.hpp"

int main(int argc, char** argv) { return sgs::cli_main(argc, argv); }
