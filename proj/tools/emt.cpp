#include "emt/cli.hpp"

int main(int argc, char** argv) { return emt::run_cli(argc, argv); }
