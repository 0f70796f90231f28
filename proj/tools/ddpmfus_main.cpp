#include "ddpmfus/cli.hpp"

int main(int argc, char** argv) { return ddpmfus::run_cli(argc, argv); }
