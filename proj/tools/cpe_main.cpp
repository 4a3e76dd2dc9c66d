#include "cpe/cli.hpp"

int main(int argc, char** argv) { return cpe::run_cli(argc, argv); }
