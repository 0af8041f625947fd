#include "certilev/cli.hpp"

int main(int argc, char** argv) { return certilev::run_cli(argc, argv); }
