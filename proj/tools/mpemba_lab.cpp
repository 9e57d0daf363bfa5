#include "mpemba/cli.hpp"

int main(int argc, char** argv) { return mpemba::run_cli(argc, argv); }
