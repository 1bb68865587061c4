#include "gsde/cli.hpp"

int main(int argc, char** argv) { return gsde::run_cli(argc, argv); }
