#include "somdepth/cli.hpp"

int main(int argc, char** argv) { return somdepth::run_cli(argc, argv); }
