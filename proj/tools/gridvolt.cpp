#include <gridvolt/cli.hpp>

int main(int argc, char** argv) { return gridvolt::run_cli(argc, argv); }
